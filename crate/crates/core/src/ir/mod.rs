//! The mini intermediate language.
//!
//! Programs are collections of functions made of labelled basic blocks holding
//! three-address instructions. Every instruction and every terminator carries an
//! [`InstrId`] that is dense and unique within its function; dependence graphs,
//! slices and pipeline plans all speak in terms of these ids.
//!
//! Scalars are 64-bit signed integers or 64-bit floats. Arrays live in global
//! storage and are passed by reference. Linked lists use a built-in node kind
//! with `data`, `next` and `sub` fields; nodes are immutable once built.

mod cfg;
mod effects;
mod interp;
mod loops;
mod parse;
mod print;
mod validate;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use cfg::Cfg;
pub(crate) use effects::access_names;
pub use effects::{EffectSummary, Loc};
pub use interp::{
    interpret, interpret_function, ExecutionResult, Heap, Input, InterpError, InterpOptions,
    NodeCell, Output, TraceEntry, Value,
};
pub(crate) use interp::{collect_outputs, Code, Hook, Machine, Memory, NoHook};
pub use loops::{find_loops, LoopError, LoopInfo};
pub use parse::{parse_program, ParseError};
pub use validate::{validate, Diagnostic};

/// Identifier of an instruction or terminator, dense within its function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InstrId(pub u32);

impl InstrId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for InstrId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "i{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScalarKind {
    Int,
    Real,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamKind {
    Int,
    Real,
    RealArray,
    Node,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
}

/// A global declaration. `len == None` declares a scalar.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalDecl {
    pub name: String,
    pub kind: ScalarKind,
    pub len: Option<usize>,
}

impl GlobalDecl {
    pub fn is_array(&self) -> bool {
        self.len.is_some()
    }

    /// Number of storage cells (1 for scalars).
    pub fn cells(&self) -> usize {
        self.len.unwrap_or(1)
    }
}

/// A writable scalar location.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Place {
    /// A parameter or local of the enclosing function.
    Local(String),
    /// A global scalar.
    Global(String),
}

impl Place {
    pub fn name(&self) -> &str {
        match self {
            Place::Local(n) | Place::Global(n) => n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Operand {
    Local(String),
    /// Read of a global scalar.
    Global(String),
    /// Address of a global array.
    ArrayRef(String),
    Int(i64),
    Real(f64),
    Null,
}

impl Operand {
    pub fn local(&self) -> Option<&str> {
        match self {
            Operand::Local(n) => Some(n),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::And => "&",
            BinOp::Or => "|",
        }
    }

    pub fn from_symbol(s: &str) -> Option<BinOp> {
        Some(match s {
            "+" => BinOp::Add,
            "-" => BinOp::Sub,
            "*" => BinOp::Mul,
            "/" => BinOp::Div,
            "%" => BinOp::Rem,
            "<" => BinOp::Lt,
            "<=" => BinOp::Le,
            ">" => BinOp::Gt,
            ">=" => BinOp::Ge,
            "==" => BinOp::Eq,
            "!=" => BinOp::Ne,
            "&" => BinOp::And,
            "|" => BinOp::Or,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeField {
    Data,
    Next,
    Sub,
}

impl NodeField {
    pub fn name(self) -> &'static str {
        match self {
            NodeField::Data => "data",
            NodeField::Next => "next",
            NodeField::Sub => "sub",
        }
    }
}

/// Built-in pure functions. Calls to these never appear as user calls.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Intrinsic {
    Cos,
    Sin,
    Sqrt,
    Exp,
    Log,
    Pow,
    Fabs,
    Floor,
    Min,
    Max,
    ToReal,
    ToInt,
}

impl Intrinsic {
    pub const ALL: [Intrinsic; 12] = [
        Intrinsic::Cos,
        Intrinsic::Sin,
        Intrinsic::Sqrt,
        Intrinsic::Exp,
        Intrinsic::Log,
        Intrinsic::Pow,
        Intrinsic::Fabs,
        Intrinsic::Floor,
        Intrinsic::Min,
        Intrinsic::Max,
        Intrinsic::ToReal,
        Intrinsic::ToInt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Intrinsic::Cos => "cos",
            Intrinsic::Sin => "sin",
            Intrinsic::Sqrt => "sqrt",
            Intrinsic::Exp => "exp",
            Intrinsic::Log => "log",
            Intrinsic::Pow => "pow",
            Intrinsic::Fabs => "fabs",
            Intrinsic::Floor => "floor",
            Intrinsic::Min => "min",
            Intrinsic::Max => "max",
            Intrinsic::ToReal => "toreal",
            Intrinsic::ToInt => "toint",
        }
    }

    pub fn from_name(name: &str) -> Option<Intrinsic> {
        Intrinsic::ALL.into_iter().find(|i| i.name() == name)
    }

    pub fn arity(self) -> usize {
        match self {
            Intrinsic::Pow | Intrinsic::Min | Intrinsic::Max => 2,
            _ => 1,
        }
    }

    /// Expensive math-library routines, as opposed to cheap conversions.
    pub fn is_transcendental(self) -> bool {
        matches!(
            self,
            Intrinsic::Cos
                | Intrinsic::Sin
                | Intrinsic::Sqrt
                | Intrinsic::Exp
                | Intrinsic::Log
                | Intrinsic::Pow
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum InstrKind {
    /// `x = a` — constant assignment or copy.
    Copy { dst: Place, src: Operand },
    Unary { dst: Place, op: UnOp, src: Operand },
    Binary { dst: Place, op: BinOp, lhs: Operand, rhs: Operand },
    /// `x = arr[i]`
    Load { dst: Place, array: Place, index: Operand },
    /// `arr[i] = v`
    Store { array: Place, index: Operand, value: Operand },
    /// `x = n.field`
    Field { dst: Place, node: Operand, field: NodeField },
    /// `[x =] call f(args)`; `callee` may name a user function or an intrinsic.
    Call { dst: Option<Place>, callee: String, args: Vec<Operand> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instr {
    pub id: InstrId,
    pub kind: InstrKind,
}

impl Instr {
    /// The scalar written by this instruction, if any.
    pub fn def(&self) -> Option<&Place> {
        match &self.kind {
            InstrKind::Copy { dst, .. }
            | InstrKind::Unary { dst, .. }
            | InstrKind::Binary { dst, .. }
            | InstrKind::Load { dst, .. }
            | InstrKind::Field { dst, .. } => Some(dst),
            InstrKind::Call { dst, .. } => dst.as_ref(),
            InstrKind::Store { .. } => None,
        }
    }

    /// Operands read by this instruction, in syntactic order.
    pub fn operands(&self) -> Vec<&Operand> {
        match &self.kind {
            InstrKind::Copy { src, .. } | InstrKind::Unary { src, .. } => vec![src],
            InstrKind::Binary { lhs, rhs, .. } => vec![lhs, rhs],
            InstrKind::Load { index, .. } => vec![index],
            InstrKind::Store { index, value, .. } => vec![index, value],
            InstrKind::Field { node, .. } => vec![node],
            InstrKind::Call { args, .. } => args.iter().collect(),
        }
    }

    /// Local scalar names read (including array-ref locals used as a base).
    pub fn local_uses(&self) -> BTreeSet<&str> {
        let mut uses: BTreeSet<&str> = self.operands().into_iter().filter_map(Operand::local).collect();
        match &self.kind {
            InstrKind::Load { array: Place::Local(a), .. } | InstrKind::Store { array: Place::Local(a), .. } => {
                uses.insert(a);
            }
            _ => {}
        }
        uses
    }

    /// Local scalar written, if any.
    pub fn local_def(&self) -> Option<&str> {
        match self.def() {
            Some(Place::Local(n)) => Some(n),
            _ => None,
        }
    }

    /// Array or global scalar directly touched by this instruction.
    pub fn may_touch(&self) -> Option<&str> {
        match &self.kind {
            InstrKind::Load { array, .. } | InstrKind::Store { array, .. } => Some(array.name()),
            _ => {
                if let Some(Place::Global(g)) = self.def() {
                    return Some(g);
                }
                self.operands().into_iter().find_map(|o| match o {
                    Operand::Global(g) => Some(g.as_str()),
                    _ => None,
                })
            }
        }
    }

    pub fn callee(&self) -> Option<&str> {
        match &self.kind {
            InstrKind::Call { callee, .. } => Some(callee),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TermKind {
    Jump(String),
    Branch { cond: Operand, then_label: String, else_label: String },
    Return(Option<Operand>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Terminator {
    pub id: InstrId,
    pub kind: TermKind,
}

impl Terminator {
    pub fn targets(&self) -> Vec<&str> {
        match &self.kind {
            TermKind::Jump(l) => vec![l],
            TermKind::Branch { then_label, else_label, .. } => vec![then_label, else_label],
            TermKind::Return(_) => vec![],
        }
    }

    pub fn local_uses(&self) -> BTreeSet<&str> {
        match &self.kind {
            TermKind::Branch { cond, .. } => cond.local().into_iter().collect(),
            TermKind::Return(Some(v)) => v.local().into_iter().collect(),
            _ => BTreeSet::new(),
        }
    }

    pub fn is_branch(&self) -> bool {
        matches!(self.kind, TermKind::Branch { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub label: String,
    pub instrs: Vec<Instr>,
    pub term: Terminator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Function {
    pub name: String,
    pub params: Vec<Param>,
    /// Locals in order of first definition.
    pub locals: Vec<String>,
    pub pure: bool,
    pub blocks: Vec<Block>,
}

impl Function {
    /// Number of ids (instructions plus terminators).
    pub fn id_count(&self) -> usize {
        self.blocks.iter().map(|b| b.instrs.len() + 1).sum()
    }

    pub fn block_index(&self, label: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.label == label)
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn instrs(&self) -> impl Iterator<Item = &Instr> {
        self.blocks.iter().flat_map(|b| b.instrs.iter())
    }

    pub fn instr(&self, id: InstrId) -> Option<&Instr> {
        self.instrs().find(|i| i.id == id)
    }

    pub fn terminator(&self, id: InstrId) -> Option<&Terminator> {
        self.blocks.iter().map(|b| &b.term).find(|t| t.id == id)
    }

    /// Block index holding the given id.
    pub fn block_of(&self, id: InstrId) -> Option<usize> {
        self.blocks
            .iter()
            .position(|b| b.term.id == id || b.instrs.iter().any(|i| i.id == id))
    }

    /// Whether this function ends with a valued `ret`.
    pub fn returns_value(&self) -> bool {
        self.blocks
            .iter()
            .any(|b| matches!(b.term.kind, TermKind::Return(Some(_))))
    }

    /// Recomputes `locals` and renumbers all ids densely in block order.
    pub fn renumber(&mut self) {
        let mut next = 0u32;
        let mut locals: Vec<String> = Vec::new();
        for block in &mut self.blocks {
            for ins in &mut block.instrs {
                ins.id = InstrId(next);
                next += 1;
                if let Some(Place::Local(n)) = ins.def() {
                    if !self.params.iter().any(|p| &p.name == n) && !locals.contains(n) {
                        locals.push(n.clone());
                    }
                }
            }
            block.term.id = InstrId(next);
            next += 1;
        }
        self.locals = locals;
    }

    /// Human-readable one-line rendering of an id (instruction or terminator).
    pub fn describe(&self, id: InstrId) -> String {
        if let Some(i) = self.instr(id) {
            return print::instr_to_string(i);
        }
        if let Some(t) = self.terminator(id) {
            return print::term_to_string(t);
        }
        format!("<unknown {id}>")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Program {
    pub entry: String,
    pub globals: Vec<GlobalDecl>,
    pub functions: Vec<Function>,
}

impl Program {
    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn global(&self, name: &str) -> Option<&GlobalDecl> {
        self.globals.iter().find(|g| g.name == name)
    }

    /// True if `callee` resolves to a user function (not an intrinsic).
    pub fn is_user_call(&self, callee: &str) -> bool {
        self.function(callee).is_some()
    }

    /// True if a call to `callee` may have side effects.
    pub fn call_has_side_effects(&self, callee: &str) -> bool {
        match self.function(callee) {
            Some(f) => !f.pure,
            None => Intrinsic::from_name(callee).is_none(),
        }
    }

    /// Canonical textual form; re-parses to an equal program.
    pub fn pretty(&self) -> String {
        print::program_to_string(self)
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.pretty())
    }
}

pub fn function_to_string(f: &Function) -> String {
    print::function_to_string(f)
}
