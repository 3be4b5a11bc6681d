//! Deterministic sequential interpreter.
//!
//! Programs are lowered to a slot-indexed form ([`Code`]) before execution so
//! that the hot loop never touches strings. Global storage lives in
//! [`Memory`], a set of atomic cells that pipeline workers share; the
//! sequential path uses the same representation so both modes run the same
//! code.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::*;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Int(i64),
    Real(f64),
    /// Reference to a global array (by storage index).
    Array(u32),
    /// Reference to a heap node; `None` is null.
    Node(Option<u32>),
}

impl Value {
    pub fn truthy(self) -> bool {
        match self {
            Value::Int(v) => v != 0,
            Value::Real(v) => v != 0.0,
            Value::Array(_) => true,
            Value::Node(n) => n.is_some(),
        }
    }

    pub fn as_real(self) -> Option<f64> {
        match self {
            Value::Int(v) => Some(v as f64),
            Value::Real(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeCell {
    pub data: f64,
    pub next: Option<u32>,
    pub sub: Option<u32>,
}

/// Immutable arena of list nodes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Heap {
    pub nodes: Vec<NodeCell>,
}

impl Heap {
    /// Appends a list with the given data values; returns its head.
    pub fn push_list(&mut self, data: &[f64], subs: &[Option<u32>]) -> Option<u32> {
        let mut next = None;
        for (k, &d) in data.iter().enumerate().rev() {
            let id = self.nodes.len() as u32;
            self.nodes.push(NodeCell { data: d, next, sub: subs.get(k).copied().flatten() });
            next = Some(id);
        }
        next
    }
}

/// Inputs of a run: entry arguments, the node heap and initial global contents.
#[derive(Clone, Debug, Default)]
pub struct Input {
    pub args: Vec<Value>,
    pub heap: Arc<Heap>,
    /// Initial values of globals; missing globals start zeroed.
    pub init: BTreeMap<String, Vec<Value>>,
}

#[derive(Clone, Copy, Debug)]
pub struct InterpOptions {
    pub trace: bool,
    pub fuel: u64,
}

impl Default for InterpOptions {
    fn default() -> Self {
        InterpOptions { trace: false, fuel: 1 << 40 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum InterpError {
    #[error("fuel exhausted after {0} steps")]
    FuelExhausted(u64),
    #[error("division by zero in {func} at {id}")]
    DivisionByZero { func: String, id: InstrId },
    #[error("out-of-bounds access {array}[{index}] in {func} at {id}")]
    OutOfBounds { func: String, id: InstrId, array: String, index: i64 },
    #[error("null node dereference in {func} at {id}")]
    NullDeref { func: String, id: InstrId },
    #[error("type error in {func} at {id}: {msg}")]
    Type { func: String, id: InstrId, msg: String },
    #[error("call depth exceeded in {0}")]
    Depth(String),
    #[error("invalid program: {0}")]
    Invalid(String),
    #[error("pipeline: {0}")]
    Pipeline(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Output {
    Scalar(Value),
    Array(Vec<Value>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub function: String,
    pub id: InstrId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    /// Every global, plus `return` when the entry returns a value.
    pub outputs: BTreeMap<String, Output>,
    pub trace: Option<Vec<TraceEntry>>,
    pub steps: u64,
    /// Per function, execution count indexed by instruction id.
    pub instr_counts: BTreeMap<String, Vec<u64>>,
}

// ---------------------------------------------------------------------------
// Lowered form

#[derive(Clone, Copy, Debug)]
pub(crate) enum Src {
    Slot(u32),
    Glob(u32),
    Imm(Value),
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Dst {
    Slot(u32),
    Glob(u32),
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Mov { dst: Dst, src: Src },
    Un { dst: Dst, op: UnOp, src: Src },
    Bin { dst: Dst, op: BinOp, a: Src, b: Src },
    Load { dst: Dst, base: Src, idx: Src },
    Store { base: Src, idx: Src, val: Src },
    Field { dst: Dst, node: Src, field: NodeField },
    Call { dst: Option<Dst>, func: u32, args: Box<[Src]> },
    Intr { dst: Option<Dst>, intr: Intrinsic, args: [Src; 2] },
}

#[derive(Clone, Debug)]
pub(crate) enum CTerm {
    Jump(u32),
    Br(Src, u32, u32),
    Ret(Option<Src>),
}

#[derive(Clone, Debug)]
pub(crate) struct CBlock {
    pub ops: Vec<(u32, Op)>,
    pub term: (u32, CTerm),
}

#[derive(Clone, Debug)]
pub(crate) struct CFunc {
    pub name: String,
    pub params: Vec<ParamKind>,
    pub slots: HashMap<String, u32>,
    pub nslots: usize,
    pub blocks: Vec<CBlock>,
    pub nids: usize,
    /// id -> (block, op index); terminators map to `ops.len()`.
    pub loc: Vec<(u32, u32)>,
}

impl CFunc {
    pub fn slot(&self, name: &str) -> Option<usize> {
        self.slots.get(name).map(|&s| s as usize)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Code {
    pub funcs: Vec<CFunc>,
    pub gindex: HashMap<String, u32>,
    pub findex: HashMap<String, u32>,
    pub entry: u32,
}

impl Code {
    pub fn compile(p: &Program) -> Result<Code, InterpError> {
        let gindex: HashMap<String, u32> = p.globals.iter().enumerate().map(|(i, g)| (g.name.clone(), i as u32)).collect();
        let findex: HashMap<String, u32> = p.functions.iter().enumerate().map(|(i, f)| (f.name.clone(), i as u32)).collect();
        let entry = *findex.get(&p.entry).ok_or_else(|| InterpError::Invalid(format!("entry '{}' not found", p.entry)))?;
        let mut funcs = Vec::new();
        for f in &p.functions {
            funcs.push(compile_fn(f, &gindex, &findex)?);
        }
        Ok(Code { funcs, gindex, findex, entry })
    }

    pub fn func(&self, name: &str) -> Option<u32> {
        self.findex.get(name).copied()
    }
}

fn compile_fn(f: &Function, gindex: &HashMap<String, u32>, findex: &HashMap<String, u32>) -> Result<CFunc, InterpError> {
    let bad = |m: String| InterpError::Invalid(format!("{}: {m}", f.name));
    let mut slots: HashMap<String, u32> = HashMap::new();
    for p in &f.params {
        let n = slots.len() as u32;
        slots.insert(p.name.clone(), n);
    }
    for l in &f.locals {
        let n = slots.len() as u32;
        slots.entry(l.clone()).or_insert(n);
    }
    // Locals that are only read (never defined) still need a slot.
    for b in &f.blocks {
        for i in &b.instrs {
            for u in i.local_uses() {
                let n = slots.len() as u32;
                slots.entry(u.to_string()).or_insert(n);
            }
            if let Some(d) = i.local_def() {
                let n = slots.len() as u32;
                slots.entry(d.to_string()).or_insert(n);
            }
        }
        for u in b.term.local_uses() {
            let n = slots.len() as u32;
            slots.entry(u.to_string()).or_insert(n);
        }
    }
    let glob = |g: &str| gindex.get(g).copied().ok_or_else(|| bad(format!("unknown global '{g}'")));
    let src = |o: &Operand| -> Result<Src, InterpError> {
        Ok(match o {
            Operand::Local(n) => Src::Slot(slots[n]),
            Operand::Global(g) => Src::Glob(glob(g)?),
            Operand::ArrayRef(g) => Src::Imm(Value::Array(glob(g)?)),
            Operand::Int(v) => Src::Imm(Value::Int(*v)),
            Operand::Real(v) => Src::Imm(Value::Real(*v)),
            Operand::Null => Src::Imm(Value::Node(None)),
        })
    };
    let dst = |p: &Place| -> Result<Dst, InterpError> {
        Ok(match p {
            Place::Local(n) => Dst::Slot(slots[n]),
            Place::Global(g) => Dst::Glob(glob(g)?),
        })
    };
    let base = |p: &Place| -> Result<Src, InterpError> {
        Ok(match p {
            Place::Local(n) => Src::Slot(slots[n]),
            Place::Global(g) => Src::Imm(Value::Array(glob(g)?)),
        })
    };
    let label = |l: &str| f.block_index(l).map(|b| b as u32).ok_or_else(|| bad(format!("unknown label '{l}'")));

    let nids = f.id_count();
    let mut loc = vec![(u32::MAX, u32::MAX); nids];
    let mut blocks = Vec::new();
    for (bi, b) in f.blocks.iter().enumerate() {
        let mut ops = Vec::new();
        for (k, i) in b.instrs.iter().enumerate() {
            let op = match &i.kind {
                InstrKind::Copy { dst: d, src: s } => Op::Mov { dst: dst(d)?, src: src(s)? },
                InstrKind::Unary { dst: d, op, src: s } => Op::Un { dst: dst(d)?, op: *op, src: src(s)? },
                InstrKind::Binary { dst: d, op, lhs, rhs } => Op::Bin { dst: dst(d)?, op: *op, a: src(lhs)?, b: src(rhs)? },
                InstrKind::Load { dst: d, array, index } => Op::Load { dst: dst(d)?, base: base(array)?, idx: src(index)? },
                InstrKind::Store { array, index, value } => Op::Store { base: base(array)?, idx: src(index)?, val: src(value)? },
                InstrKind::Field { dst: d, node, field } => Op::Field { dst: dst(d)?, node: src(node)?, field: *field },
                InstrKind::Call { dst: d, callee, args } => {
                    let d = d.as_ref().map(&dst).transpose()?;
                    if let Some(&fi) = findex.get(callee) {
                        Op::Call { dst: d, func: fi, args: args.iter().map(&src).collect::<Result<Vec<_>, _>>()?.into() }
                    } else if let Some(intr) = Intrinsic::from_name(callee) {
                        if args.len() != intr.arity() {
                            return Err(bad(format!("{callee} expects {} argument(s)", intr.arity())));
                        }
                        let a0 = src(&args[0])?;
                        let a1 = if args.len() > 1 { src(&args[1])? } else { Src::Imm(Value::Int(0)) };
                        Op::Intr { dst: d, intr, args: [a0, a1] }
                    } else {
                        return Err(bad(format!("unresolved call '{callee}'")));
                    }
                }
            };
            loc[i.id.index()] = (bi as u32, k as u32);
            ops.push((i.id.0, op));
        }
        let term = match &b.term.kind {
            TermKind::Jump(l) => CTerm::Jump(label(l)?),
            TermKind::Branch { cond, then_label, else_label } => CTerm::Br(src(cond)?, label(then_label)?, label(else_label)?),
            TermKind::Return(v) => CTerm::Ret(v.as_ref().map(&src).transpose()?),
        };
        loc[b.term.id.index()] = (bi as u32, ops.len() as u32);
        blocks.push(CBlock { ops, term: (b.term.id.0, term) });
    }
    let nslots = slots.len();
    Ok(CFunc { name: f.name.clone(), params: f.params.iter().map(|p| p.kind).collect(), slots, nslots, blocks, nids, loc })
}

// ---------------------------------------------------------------------------
// Storage

/// Global storage, shared by all workers of a run.
#[derive(Debug)]
pub(crate) struct Memory {
    pub cells: Vec<Box<[AtomicU64]>>,
    pub kinds: Vec<ScalarKind>,
    pub names: Vec<String>,
}

impl Memory {
    pub fn new(globals: &[GlobalDecl], init: &BTreeMap<String, Vec<Value>>) -> Result<Memory, InterpError> {
        let mut cells = Vec::new();
        for g in globals {
            let v: Box<[AtomicU64]> = (0..g.cells())
                .map(|_| AtomicU64::new(match g.kind {
                    ScalarKind::Int => 0,
                    ScalarKind::Real => 0f64.to_bits(),
                }))
                .collect();
            cells.push(v);
        }
        let m = Memory { cells, kinds: globals.iter().map(|g| g.kind).collect(), names: globals.iter().map(|g| g.name.clone()).collect() };
        for (name, vals) in init {
            let gi = globals
                .iter()
                .position(|g| &g.name == name)
                .ok_or_else(|| InterpError::Invalid(format!("initializer for unknown global '{name}'")))?;
            if vals.len() > m.cells[gi].len() {
                return Err(InterpError::Invalid(format!("initializer for '{name}' too long")));
            }
            for (k, v) in vals.iter().enumerate() {
                let bits = m.encode(gi, *v).ok_or_else(|| InterpError::Invalid(format!("bad initializer for '{name}'")))?;
                m.cells[gi][k].store(bits, Ordering::Relaxed);
            }
        }
        Ok(m)
    }

    fn encode(&self, g: usize, v: Value) -> Option<u64> {
        match (self.kinds[g], v) {
            (ScalarKind::Int, Value::Int(x)) => Some(x as u64),
            (ScalarKind::Real, Value::Real(x)) => Some(x.to_bits()),
            (ScalarKind::Real, Value::Int(x)) => Some((x as f64).to_bits()),
            _ => None,
        }
    }

    fn decode(&self, g: usize, bits: u64) -> Value {
        match self.kinds[g] {
            ScalarKind::Int => Value::Int(bits as i64),
            ScalarKind::Real => Value::Real(f64::from_bits(bits)),
        }
    }

    #[inline]
    pub fn get(&self, g: usize, k: usize) -> Value {
        self.decode(g, self.cells[g][k].load(Ordering::Relaxed))
    }

    #[inline]
    pub fn set(&self, g: usize, k: usize, v: Value) -> bool {
        match self.encode(g, v) {
            Some(bits) => {
                self.cells[g][k].store(bits, Ordering::Relaxed);
                true
            }
            None => false,
        }
    }

    /// Copies the full contents of global `from` into global `to`.
    pub fn copy(&self, from: usize, to: usize) {
        for (a, b) in self.cells[from].iter().zip(self.cells[to].iter()) {
            b.store(a.load(Ordering::Relaxed), Ordering::Relaxed);
        }
    }

    pub fn snapshot(&self, g: usize) -> Output {
        let vals: Vec<Value> = (0..self.cells[g].len()).map(|k| self.get(g, k)).collect();
        Output::Array(vals)
    }
}

// ---------------------------------------------------------------------------
// Execution

/// Intercepts execution of the outermost frame; used by the pipeline driver.
pub(crate) trait Hook {
    const ACTIVE: bool;
    /// Whether the instruction `id` of the hooked function runs elsewhere.
    fn foreign(&self, id: u32) -> bool;
    fn on_skip(&mut self, id: u32, frame: &[Value]) -> Result<(), InterpError>;
    fn on_edge(&mut self, from: u32, to: u32, frame: &mut [Value]) -> Result<(), InterpError>;
}

pub(crate) struct NoHook;

impl Hook for NoHook {
    const ACTIVE: bool = false;
    fn foreign(&self, _: u32) -> bool {
        false
    }
    fn on_skip(&mut self, _: u32, _: &[Value]) -> Result<(), InterpError> {
        Ok(())
    }
    fn on_edge(&mut self, _: u32, _: u32, _: &mut [Value]) -> Result<(), InterpError> {
        Ok(())
    }
}

const MAX_DEPTH: usize = 200;

pub(crate) struct Machine<'a> {
    pub code: &'a Code,
    pub mem: &'a Memory,
    pub heap: &'a Heap,
    pub steps: u64,
    pub fuel: u64,
    pub counts: Vec<Vec<u64>>,
    pub trace: Option<Vec<(u32, u32)>>,
    depth: usize,
}

impl<'a> Machine<'a> {
    pub fn new(code: &'a Code, mem: &'a Memory, heap: &'a Heap, opts: &InterpOptions) -> Machine<'a> {
        Machine {
            code,
            mem,
            heap,
            steps: 0,
            fuel: opts.fuel,
            counts: code.funcs.iter().map(|f| vec![0; f.nids]).collect(),
            trace: opts.trace.then(Vec::new),
            depth: 0,
        }
    }

    fn err_type(&self, fi: u32, id: u32, msg: impl Into<String>) -> InterpError {
        InterpError::Type { func: self.code.funcs[fi as usize].name.clone(), id: InstrId(id), msg: msg.into() }
    }

    #[inline]
    fn read(&self, frame: &[Value], s: &Src) -> Value {
        match *s {
            Src::Slot(k) => frame[k as usize],
            Src::Glob(g) => self.mem.get(g as usize, 0),
            Src::Imm(v) => v,
        }
    }

    #[inline]
    fn write(&self, fi: u32, id: u32, frame: &mut [Value], d: &Dst, v: Value) -> Result<(), InterpError> {
        match *d {
            Dst::Slot(k) => {
                frame[k as usize] = v;
                Ok(())
            }
            Dst::Glob(g) => {
                if self.mem.set(g as usize, 0, v) {
                    Ok(())
                } else {
                    Err(self.err_type(fi, id, format!("cannot store {v:?} in '{}'", self.mem.names[g as usize])))
                }
            }
        }
    }

    #[inline]
    fn tick(&mut self, fi: u32, id: u32) -> Result<(), InterpError> {
        self.steps += 1;
        if self.steps > self.fuel {
            return Err(InterpError::FuelExhausted(self.fuel));
        }
        self.counts[fi as usize][id as usize] += 1;
        if let Some(t) = self.trace.as_mut() {
            t.push((fi, id));
        }
        Ok(())
    }

    /// Builds a frame for `fi` from argument values, coercing as the params require.
    pub fn frame(&self, fi: u32, args: &[Value]) -> Result<Vec<Value>, InterpError> {
        let f = &self.code.funcs[fi as usize];
        if args.len() != f.params.len() {
            return Err(InterpError::Type { func: f.name.clone(), id: InstrId(0), msg: format!("expected {} arguments, got {}", f.params.len(), args.len()) });
        }
        let mut frame = vec![Value::Int(0); f.nslots];
        for (k, (&a, &kind)) in args.iter().zip(f.params.iter()).enumerate() {
            frame[k] = match (kind, a) {
                (ParamKind::Int, Value::Int(_)) | (ParamKind::Real, Value::Real(_)) | (ParamKind::RealArray, Value::Array(_)) | (ParamKind::Node, Value::Node(_)) => a,
                (ParamKind::Real, Value::Int(x)) => Value::Real(x as f64),
                _ => {
                    return Err(InterpError::Type { func: f.name.clone(), id: InstrId(0), msg: format!("argument {k} has wrong kind: {a:?}") })
                }
            };
        }
        Ok(frame)
    }

    pub fn call(&mut self, fi: u32, args: &[Value]) -> Result<Option<Value>, InterpError> {
        let mut frame = self.frame(fi, args)?;
        self.run(fi, &mut frame, &mut NoHook)
    }

    /// Runs function `fi` to completion in `frame`.
    pub fn run<H: Hook>(&mut self, fi: u32, frame: &mut [Value], hook: &mut H) -> Result<Option<Value>, InterpError> {
        if self.depth >= MAX_DEPTH {
            return Err(InterpError::Depth(self.code.funcs[fi as usize].name.clone()));
        }
        self.depth += 1;
        let r = self.run_inner(fi, frame, hook);
        self.depth -= 1;
        r
    }

    fn run_inner<H: Hook>(&mut self, fi: u32, frame: &mut [Value], hook: &mut H) -> Result<Option<Value>, InterpError> {
        let code = self.code;
        let f = &code.funcs[fi as usize];
        let mut b = 0u32;
        loop {
            let blk = &f.blocks[b as usize];
            for (id, op) in &blk.ops {
                if H::ACTIVE && hook.foreign(*id) {
                    hook.on_skip(*id, frame)?;
                    continue;
                }
                self.exec(fi, *id, op, frame)?;
            }
            let (tid, term) = &blk.term;
            self.tick(fi, *tid)?;
            let next = match term {
                CTerm::Jump(t) => *t,
                CTerm::Br(c, t, e) => {
                    if self.read(frame, c).truthy() {
                        *t
                    } else {
                        *e
                    }
                }
                CTerm::Ret(v) => return Ok(v.as_ref().map(|s| self.read(frame, s))),
            };
            if H::ACTIVE {
                hook.on_edge(b, next, frame)?;
            }
            b = next;
        }
    }

    /// Executes the instruction with id `id` of function `fi` in `frame`.
    pub fn exec_id(&mut self, fi: u32, id: u32, frame: &mut [Value]) -> Result<(), InterpError> {
        let f = &self.code.funcs[fi as usize];
        let (b, k) = f.loc[id as usize];
        let (_, op) = &f.blocks[b as usize].ops[k as usize];
        self.exec(fi, id, op, frame)
    }

    #[inline]
    fn exec(&mut self, fi: u32, id: u32, op: &Op, frame: &mut [Value]) -> Result<(), InterpError> {
        self.tick(fi, id)?;
        match op {
            Op::Mov { dst, src } => {
                let v = self.read(frame, src);
                self.write(fi, id, frame, dst, v)
            }
            Op::Un { dst, op, src } => {
                let a = self.read(frame, src);
                let v = match (op, a) {
                    (UnOp::Neg, Value::Int(x)) => Value::Int(x.wrapping_neg()),
                    (UnOp::Neg, Value::Real(x)) => Value::Real(-x),
                    (UnOp::Not, a) => Value::Int(i64::from(!a.truthy())),
                    _ => return Err(self.err_type(fi, id, format!("cannot negate {a:?}"))),
                };
                self.write(fi, id, frame, dst, v)
            }
            Op::Bin { dst, op, a, b } => {
                let x = self.read(frame, a);
                let y = self.read(frame, b);
                let v = self.binary(fi, id, *op, x, y)?;
                self.write(fi, id, frame, dst, v)
            }
            Op::Load { dst, base, idx } => {
                let (g, k) = self.element(fi, id, frame, base, idx)?;
                let v = self.mem.get(g, k);
                self.write(fi, id, frame, dst, v)
            }
            Op::Store { base, idx, val } => {
                let (g, k) = self.element(fi, id, frame, base, idx)?;
                let v = self.read(frame, val);
                if self.mem.set(g, k, v) {
                    Ok(())
                } else {
                    Err(self.err_type(fi, id, format!("cannot store {v:?} in '{}'", self.mem.names[g])))
                }
            }
            Op::Field { dst, node, field } => {
                let n = match self.read(frame, node) {
                    Value::Node(Some(n)) => n,
                    Value::Node(None) => {
                        return Err(InterpError::NullDeref { func: self.code.funcs[fi as usize].name.clone(), id: InstrId(id) })
                    }
                    other => return Err(self.err_type(fi, id, format!("field access on {other:?}"))),
                };
                let cell = self.heap.nodes.get(n as usize).ok_or_else(|| self.err_type(fi, id, "dangling node"))?;
                let v = match field {
                    NodeField::Data => Value::Real(cell.data),
                    NodeField::Next => Value::Node(cell.next),
                    NodeField::Sub => Value::Node(cell.sub),
                };
                self.write(fi, id, frame, dst, v)
            }
            Op::Call { dst, func, args } => {
                let vals: smallvec::SmallVec<[Value; 6]> = args.iter().map(|a| self.read(frame, a)).collect();
                let r = self.call(*func, &vals)?;
                match (dst, r) {
                    (Some(d), Some(v)) => self.write(fi, id, frame, d, v),
                    (Some(_), None) => Err(self.err_type(fi, id, "callee returned no value")),
                    (None, _) => Ok(()),
                }
            }
            Op::Intr { dst, intr, args } => {
                let a = self.read(frame, &args[0]);
                let b = self.read(frame, &args[1]);
                let v = self.intrinsic(fi, id, *intr, a, b)?;
                match dst {
                    Some(d) => self.write(fi, id, frame, d, v),
                    None => Ok(()),
                }
            }
        }
    }

    fn element(&self, fi: u32, id: u32, frame: &[Value], base: &Src, idx: &Src) -> Result<(usize, usize), InterpError> {
        let g = match self.read(frame, base) {
            Value::Array(g) => g as usize,
            other => return Err(self.err_type(fi, id, format!("indexing non-array {other:?}"))),
        };
        let k = match self.read(frame, idx) {
            Value::Int(k) => k,
            other => return Err(self.err_type(fi, id, format!("non-integer index {other:?}"))),
        };
        if k < 0 || k as usize >= self.mem.cells[g].len() {
            return Err(InterpError::OutOfBounds {
                func: self.code.funcs[fi as usize].name.clone(),
                id: InstrId(id),
                array: self.mem.names[g].clone(),
                index: k,
            });
        }
        Ok((g, k as usize))
    }

    fn binary(&self, fi: u32, id: u32, op: BinOp, x: Value, y: Value) -> Result<Value, InterpError> {
        use Value::*;
        let div0 = || InterpError::DivisionByZero { func: self.code.funcs[fi as usize].name.clone(), id: InstrId(id) };
        let b = |c: bool| Int(i64::from(c));
        Ok(match (x, y) {
            (Int(a), Int(c)) => match op {
                BinOp::Add => Int(a.wrapping_add(c)),
                BinOp::Sub => Int(a.wrapping_sub(c)),
                BinOp::Mul => Int(a.wrapping_mul(c)),
                BinOp::Div => Int(a.checked_div(c).or_else(|| (c == -1).then(|| a.wrapping_neg())).ok_or_else(div0)?),
                BinOp::Rem => Int(if c == 0 { return Err(div0()) } else { a.wrapping_rem(c) }),
                BinOp::Lt => b(a < c),
                BinOp::Le => b(a <= c),
                BinOp::Gt => b(a > c),
                BinOp::Ge => b(a >= c),
                BinOp::Eq => b(a == c),
                BinOp::Ne => b(a != c),
                BinOp::And => Int(a & c),
                BinOp::Or => Int(a | c),
            },
            (Int(_) | Real(_), Int(_) | Real(_)) => {
                let (a, c) = (x.as_real().unwrap(), y.as_real().unwrap());
                match op {
                    BinOp::Add => Real(a + c),
                    BinOp::Sub => Real(a - c),
                    BinOp::Mul => Real(a * c),
                    BinOp::Div if c == 0.0 => return Err(div0()),
                    BinOp::Div => Real(a / c),
                    BinOp::Rem if c == 0.0 => return Err(div0()),
                    BinOp::Rem => Real(a % c),
                    BinOp::Lt => b(a < c),
                    BinOp::Le => b(a <= c),
                    BinOp::Gt => b(a > c),
                    BinOp::Ge => b(a >= c),
                    BinOp::Eq => b(a == c),
                    BinOp::Ne => b(a != c),
                    BinOp::And => b(a != 0.0 && c != 0.0),
                    BinOp::Or => b(a != 0.0 || c != 0.0),
                }
            }
            (Node(a), Node(c)) => match op {
                BinOp::Eq => b(a == c),
                BinOp::Ne => b(a != c),
                _ => return Err(self.err_type(fi, id, "arithmetic on nodes")),
            },
            _ => return Err(self.err_type(fi, id, format!("bad operands {x:?} {} {y:?}", op.symbol()))),
        })
    }

    fn intrinsic(&self, fi: u32, id: u32, intr: Intrinsic, a: Value, b: Value) -> Result<Value, InterpError> {
        let real = |v: Value| v.as_real().ok_or_else(|| self.err_type(fi, id, format!("{} of {v:?}", intr.name())));
        Ok(match intr {
            Intrinsic::Cos => Value::Real(real(a)?.cos()),
            Intrinsic::Sin => Value::Real(real(a)?.sin()),
            Intrinsic::Sqrt => Value::Real(real(a)?.sqrt()),
            Intrinsic::Exp => Value::Real(real(a)?.exp()),
            Intrinsic::Log => Value::Real(real(a)?.ln()),
            Intrinsic::Pow => Value::Real(real(a)?.powf(real(b)?)),
            Intrinsic::Fabs => Value::Real(real(a)?.abs()),
            Intrinsic::Floor => Value::Real(real(a)?.floor()),
            Intrinsic::ToReal => Value::Real(real(a)?),
            Intrinsic::ToInt => match a {
                Value::Int(x) => Value::Int(x),
                _ => Value::Int(real(a)? as i64),
            },
            Intrinsic::Min | Intrinsic::Max => match (a, b) {
                (Value::Int(x), Value::Int(y)) => Value::Int(if intr == Intrinsic::Min { x.min(y) } else { x.max(y) }),
                _ => {
                    let (x, y) = (real(a)?, real(b)?);
                    Value::Real(if intr == Intrinsic::Min { x.min(y) } else { x.max(y) })
                }
            },
        })
    }
}

/// Collects final outputs: all globals of the program plus the return value.
pub(crate) fn collect_outputs(p: &Program, mem: &Memory, ret: Option<Value>) -> BTreeMap<String, Output> {
    let mut out = BTreeMap::new();
    for (gi, g) in p.globals.iter().enumerate() {
        let o = if g.is_array() { mem.snapshot(gi) } else { Output::Scalar(mem.get(gi, 0)) };
        out.insert(g.name.clone(), o);
    }
    if let Some(v) = ret {
        out.insert("return".to_string(), Output::Scalar(v));
    }
    out
}

/// Runs the program's entry function on `input`.
pub fn interpret(p: &Program, input: &Input, opts: &InterpOptions) -> Result<ExecutionResult, InterpError> {
    interpret_function(p, &p.entry, &input.args, input, opts)
}

/// Runs function `name` with `args`, using globals and heap from `input`.
pub fn interpret_function(p: &Program, name: &str, args: &[Value], input: &Input, opts: &InterpOptions) -> Result<ExecutionResult, InterpError> {
    let code = Code::compile(p)?;
    let fi = code.func(name).ok_or_else(|| InterpError::Invalid(format!("no function '{name}'")))?;
    let mem = Memory::new(&p.globals, &input.init)?;
    let mut m = Machine::new(&code, &mem, &input.heap, opts);
    let ret = m.call(fi, args)?;
    let outputs = collect_outputs(p, &mem, ret);
    let trace = m.trace.take().map(|t| {
        t.into_iter()
            .map(|(f, id)| TraceEntry { function: code.funcs[f as usize].name.clone(), id: InstrId(id) })
            .collect()
    });
    let instr_counts = code.funcs.iter().zip(m.counts).map(|(f, c)| (f.name.clone(), c)).collect();
    Ok(ExecutionResult { outputs, trace, steps: m.steps, instr_counts })
}
