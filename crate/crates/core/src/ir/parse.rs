use std::collections::{BTreeSet, HashMap, HashSet};

use thiserror::Error;

use super::*;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{line}:{col}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

const KEYWORDS: &[&str] = &[
    "func", "pure", "global", "entry", "call", "jump", "br", "ret", "neg", "not", "null", "int",
    "real", "node",
];

/// Whether `s` can be written as a name in program text.
pub(crate) fn is_ident(s: &str) -> bool {
    let mut cs = s.bytes();
    matches!(cs.next(), Some(c) if c.is_ascii_alphabetic() || c == b'_')
        && cs.all(|c| c.is_ascii_alphanumeric() || c == b'_')
        && !KEYWORDS.contains(&s)
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Real(f64),
    Sym(&'static str),
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    col: usize,
}

const SYMBOLS: &[&str] = &[
    "<=", ">=", "==", "!=", "=", "+", "-", "*", "/", "%", "<", ">", "&", "|", "(", ")", "[", "]",
    "{", "}", ",", ":", ".",
];

fn lex(line: &str, lineno: usize) -> Result<Vec<Token>, ParseError> {
    let bytes = line.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |col: usize, message: String| ParseError { line: lineno, col, message };
    while i < bytes.len() {
        let c = bytes[i];
        if c == b'#' {
            break;
        }
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let col = i + 1;
        if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token { tok: Tok::Ident(line[start..i].to_string()), col });
            continue;
        }
        // A '-' directly followed by a digit is a negative literal when the
        // previous token cannot end an operand.
        let neg_literal = c == b'-'
            && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)
            && !matches!(
                out.last().map(|t: &Token| &t.tok),
                Some(Tok::Ident(_)) | Some(Tok::Int(_)) | Some(Tok::Real(_)) | Some(Tok::Sym(")")) | Some(Tok::Sym("]"))
            );
        if c.is_ascii_digit() || neg_literal {
            let start = i;
            if neg_literal {
                i += 1;
            }
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let mut is_real = false;
            if i < bytes.len() && bytes[i] == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit) {
                is_real = true;
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    is_real = true;
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            if i < bytes.len() && (bytes[i].is_ascii_alphabetic() || bytes[i] == b'_') {
                return Err(err(col, "malformed number".into()));
            }
            let text = &line[start..i];
            let tok = if is_real {
                let v: f64 = text.parse().map_err(|_| err(col, format!("bad real literal '{text}'")))?;
                if !v.is_finite() {
                    return Err(err(col, format!("real literal '{text}' out of range")));
                }
                Tok::Real(v)
            } else {
                Tok::Int(text.parse().map_err(|_| err(col, format!("integer literal '{text}' out of range")))?)
            };
            out.push(Token { tok, col });
            continue;
        }
        if line[i..].starts_with("[]") {
            out.push(Token { tok: Tok::Sym("[]"), col });
            i += 2;
            continue;
        }
        match SYMBOLS.iter().find(|s| line[i..].starts_with(**s)) {
            Some(s) => {
                out.push(Token { tok: Tok::Sym(s), col });
                i += s.len();
            }
            None => {
                let ch = line[i..].chars().next().unwrap_or('?');
                return Err(err(col, format!("unexpected character '{ch}'")));
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    toks: &'a [Token],
    pos: usize,
    line: usize,
    end_col: usize,
}

impl<'a> Cursor<'a> {
    fn new(toks: &'a [Token], line: usize, text: &str) -> Self {
        Cursor { toks, pos: 0, line, end_col: text.trim_end().len() + 1 }
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |t| t.col)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError { line: self.line, col: self.col(), message: message.into() })
    }

    fn peek(&self) -> Option<&'a Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn peek_at(&self, k: usize) -> Option<&'a Tok> {
        self.toks.get(self.pos + k).map(|t| &t.tok)
    }

    fn next(&mut self) -> Option<&'a Tok> {
        let t = self.toks.get(self.pos).map(|t| &t.tok);
        self.pos += 1;
        t
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), ParseError> {
        match self.peek() {
            Some(Tok::Sym(x)) if *x == s => {
                self.pos += 1;
                Ok(())
            }
            _ => self.err(format!("expected '{s}'")),
        }
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Sym(x)) if *x == s) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(x)) if x == kw)
    }

    fn ident(&mut self) -> Result<(String, usize), ParseError> {
        let col = self.col();
        match self.peek() {
            Some(Tok::Ident(x)) if !KEYWORDS.contains(&x.as_str()) => {
                self.pos += 1;
                Ok((x.clone(), col))
            }
            Some(Tok::Ident(x)) => self.err(format!("'{x}' is a reserved word")),
            _ => self.err("expected identifier"),
        }
    }

    fn finish(&self) -> Result<(), ParseError> {
        if self.at_end() {
            Ok(())
        } else {
            self.err("unexpected trailing tokens")
        }
    }
}

/// Raw operand before name resolution.
#[derive(Clone, Debug)]
enum RawOp {
    Name(String, usize),
    Int(i64),
    Real(f64),
    Null,
}

#[derive(Clone, Debug)]
enum RawInstr {
    Assign { dst: (String, usize), rhs: RawRhs },
    Store { array: (String, usize), index: RawOp, value: RawOp },
    Call { callee: String, args: Vec<RawOp> },
}

#[derive(Clone, Debug)]
enum RawRhs {
    Copy(RawOp),
    Unary(UnOp, RawOp),
    Binary(BinOp, RawOp, RawOp),
    Load((String, usize), RawOp),
    Field(RawOp, NodeField),
    Call(String, Vec<RawOp>),
}

#[derive(Clone, Debug)]
enum RawTerm {
    Jump((String, usize)),
    Branch(RawOp, (String, usize), (String, usize)),
    Return(Option<RawOp>),
}

struct RawBlock {
    label: String,
    instrs: Vec<(usize, RawInstr)>,
    term: Option<(usize, RawTerm)>,
}

struct RawFunc {
    name: String,
    line: usize,
    params: Vec<Param>,
    pure: bool,
    blocks: Vec<RawBlock>,
}

fn operand(c: &mut Cursor) -> Result<RawOp, ParseError> {
    let col = c.col();
    match c.next() {
        Some(Tok::Int(v)) => Ok(RawOp::Int(*v)),
        Some(Tok::Real(v)) => Ok(RawOp::Real(*v)),
        Some(Tok::Ident(x)) if x == "null" => Ok(RawOp::Null),
        Some(Tok::Ident(x)) if !KEYWORDS.contains(&x.as_str()) => Ok(RawOp::Name(x.clone(), col)),
        _ => {
            c.pos -= 1;
            c.err("expected operand")
        }
    }
}

fn call_args(c: &mut Cursor) -> Result<(String, Vec<RawOp>), ParseError> {
    let (callee, _) = c.ident()?;
    c.expect_sym("(")?;
    let mut args = Vec::new();
    if !c.eat_sym(")") {
        loop {
            args.push(operand(c)?);
            if c.eat_sym(")") {
                break;
            }
            c.expect_sym(",")?;
        }
    }
    Ok((callee, args))
}

fn rhs(c: &mut Cursor) -> Result<RawRhs, ParseError> {
    if c.is_kw("call") {
        c.next();
        let (callee, args) = call_args(c)?;
        return Ok(RawRhs::Call(callee, args));
    }
    if c.is_kw("neg") || c.is_kw("not") {
        let op = if c.is_kw("neg") { UnOp::Neg } else { UnOp::Not };
        c.next();
        return Ok(RawRhs::Unary(op, operand(c)?));
    }
    let first = operand(c)?;
    if c.eat_sym("[") {
        let RawOp::Name(arr, col) = first else {
            return c.err("array base must be a name");
        };
        let index = operand(c)?;
        c.expect_sym("]")?;
        return Ok(RawRhs::Load((arr, col), index));
    }
    if c.eat_sym(".") {
        let (f, _) = match c.peek() {
            Some(Tok::Ident(x)) => {
                let col = c.col();
                c.next();
                (x.clone(), col)
            }
            _ => return c.err("expected field name"),
        };
        let field = match f.as_str() {
            "data" => NodeField::Data,
            "next" => NodeField::Next,
            "sub" => NodeField::Sub,
            _ => {
                c.pos -= 1;
                return c.err(format!("unknown field '{f}'"));
            }
        };
        return Ok(RawRhs::Field(first, field));
    }
    if let Some(Tok::Sym(s)) = c.peek() {
        if let Some(op) = BinOp::from_symbol(s) {
            c.next();
            let second = operand(c)?;
            return Ok(RawRhs::Binary(op, first, second));
        }
    }
    Ok(RawRhs::Copy(first))
}

fn parse_type(c: &mut Cursor) -> Result<ParamKind, ParseError> {
    match c.peek() {
        Some(Tok::Ident(t)) if t == "int" => {
            c.next();
            Ok(ParamKind::Int)
        }
        Some(Tok::Ident(t)) if t == "node" => {
            c.next();
            Ok(ParamKind::Node)
        }
        Some(Tok::Ident(t)) if t == "real" => {
            c.next();
            if c.eat_sym("[]") {
                Ok(ParamKind::RealArray)
            } else {
                Ok(ParamKind::Real)
            }
        }
        _ => c.err("expected type (int, real, real[] or node)"),
    }
}

/// Parses mini-IR source text into a [`Program`].
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let mut entry: Option<(String, usize)> = None;
    let mut globals: Vec<GlobalDecl> = Vec::new();
    let mut funcs: Vec<RawFunc> = Vec::new();
    let mut current: Option<RawFunc> = None;
    let mut names: HashSet<String> = HashSet::new();

    for (idx, raw_line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let toks = lex(raw_line, lineno)?;
        if toks.is_empty() {
            continue;
        }
        let mut c = Cursor::new(&toks, lineno, raw_line);

        if let Some(func) = current.as_mut() {
            if c.eat_sym("}") {
                c.finish()?;
                if func.blocks.is_empty() {
                    return c.err(format!("function '{}' has no blocks", func.name));
                }
                if let Some(b) = func.blocks.iter().find(|b| b.term.is_none()) {
                    return c.err(format!("block '{}' has no terminator", b.label));
                }
                funcs.push(current.take().unwrap());
                continue;
            }
            // label line
            if matches!(c.peek(), Some(Tok::Ident(_))) && matches!(c.peek_at(1), Some(Tok::Sym(":"))) && toks.len() == 2 {
                let (label, _) = c.ident()?;
                if func.blocks.iter().any(|b| b.label == label) {
                    return c.err(format!("duplicate name: label '{label}'"));
                }
                if let Some(prev) = func.blocks.last() {
                    if prev.term.is_none() {
                        return c.err(format!("block '{}' has no terminator", prev.label));
                    }
                }
                func.blocks.push(RawBlock { label, instrs: Vec::new(), term: None });
                continue;
            }
            let Some(block) = func.blocks.last_mut() else {
                return c.err("expected block label");
            };
            if block.term.is_some() {
                return c.err("instruction after terminator");
            }
            if c.is_kw("jump") {
                c.next();
                let l = c.ident()?;
                c.finish()?;
                block.term = Some((lineno, RawTerm::Jump(l)));
            } else if c.is_kw("br") {
                c.next();
                let cond = operand(&mut c)?;
                let t = c.ident()?;
                let e = c.ident()?;
                c.finish()?;
                block.term = Some((lineno, RawTerm::Branch(cond, t, e)));
            } else if c.is_kw("ret") {
                c.next();
                let v = if c.at_end() { None } else { Some(operand(&mut c)?) };
                c.finish()?;
                block.term = Some((lineno, RawTerm::Return(v)));
            } else if c.is_kw("call") {
                c.next();
                let (callee, args) = call_args(&mut c)?;
                c.finish()?;
                block.instrs.push((lineno, RawInstr::Call { callee, args }));
            } else {
                let dst = c.ident()?;
                if c.eat_sym("[") {
                    let index = operand(&mut c)?;
                    c.expect_sym("]")?;
                    c.expect_sym("=")?;
                    let value = operand(&mut c)?;
                    c.finish()?;
                    block.instrs.push((lineno, RawInstr::Store { array: dst, index, value }));
                } else {
                    c.expect_sym("=")?;
                    let r = rhs(&mut c)?;
                    c.finish()?;
                    block.instrs.push((lineno, RawInstr::Assign { dst, rhs: r }));
                }
            }
            continue;
        }

        // top level
        if c.is_kw("entry") {
            c.next();
            let (name, col) = c.ident()?;
            c.finish()?;
            if entry.is_some() {
                return c.err("duplicate entry directive");
            }
            entry = Some((name, col));
        } else if c.is_kw("global") {
            c.next();
            let kind = match c.peek() {
                Some(Tok::Ident(t)) if t == "int" => ScalarKind::Int,
                Some(Tok::Ident(t)) if t == "real" => ScalarKind::Real,
                _ => return c.err("expected 'int' or 'real'"),
            };
            c.next();
            let (name, _) = c.ident()?;
            let len = if c.eat_sym("[") {
                let n = match c.next() {
                    Some(Tok::Int(n)) if *n >= 1 => *n as usize,
                    _ => {
                        c.pos -= 1;
                        return c.err("expected positive array length");
                    }
                };
                c.expect_sym("]")?;
                Some(n)
            } else {
                None
            };
            c.finish()?;
            if !names.insert(name.clone()) {
                return c.err(format!("duplicate name: '{name}'"));
            }
            globals.push(GlobalDecl { name, kind, len });
        } else if c.is_kw("func") {
            c.next();
            let (name, _) = c.ident()?;
            if !names.insert(name.clone()) {
                return c.err(format!("duplicate name: '{name}'"));
            }
            if Intrinsic::from_name(&name).is_some() {
                return c.err(format!("'{name}' is an intrinsic"));
            }
            c.expect_sym("(")?;
            let mut params: Vec<Param> = Vec::new();
            if !c.eat_sym(")") {
                loop {
                    let (pname, _) = c.ident()?;
                    c.expect_sym(":")?;
                    let kind = parse_type(&mut c)?;
                    if params.iter().any(|p| p.name == pname) {
                        return c.err(format!("duplicate name: parameter '{pname}'"));
                    }
                    params.push(Param { name: pname, kind });
                    if c.eat_sym(")") {
                        break;
                    }
                    c.expect_sym(",")?;
                }
            }
            let pure = if c.is_kw("pure") {
                c.next();
                true
            } else {
                false
            };
            c.expect_sym("{")?;
            c.finish()?;
            current = Some(RawFunc { name, line: lineno, params, pure, blocks: Vec::new() });
        } else {
            return c.err("expected 'entry', 'global' or 'func'");
        }
    }
    if let Some(f) = current {
        return Err(ParseError { line: f.line, col: 1, message: format!("function '{}' is not closed", f.name) });
    }

    let lines = text.lines().count().max(1);
    let (entry, entry_col) = entry.unwrap_or_else(|| ("main".to_string(), 1));
    if !funcs.iter().any(|f| f.name == entry) {
        return Err(ParseError { line: lines, col: entry_col, message: format!("entry not found: '{entry}'") });
    }

    let gmap: HashMap<&str, &GlobalDecl> = globals.iter().map(|g| (g.name.as_str(), g)).collect();
    let mut functions = Vec::new();
    for f in &funcs {
        functions.push(resolve(f, &gmap)?);
    }
    Ok(Program { entry, globals, functions })
}

fn resolve(f: &RawFunc, globals: &HashMap<&str, &GlobalDecl>) -> Result<Function, ParseError> {
    for p in &f.params {
        if globals.contains_key(p.name.as_str()) {
            return Err(ParseError { line: f.line, col: 1, message: format!("duplicate name: parameter '{}' shadows a global", p.name) });
        }
    }
    // Names assigned anywhere in the body are locals unless they are globals.
    let mut assigned: BTreeSet<&str> = BTreeSet::new();
    for b in &f.blocks {
        for (_, ins) in &b.instrs {
            if let RawInstr::Assign { dst, .. } = ins {
                assigned.insert(&dst.0);
            }
        }
    }
    let labels: HashSet<&str> = f.blocks.iter().map(|b| b.label.as_str()).collect();
    let is_local = |n: &str| f.params.iter().any(|p| p.name == n) || (assigned.contains(n) && !globals.contains_key(n));

    let op = |o: &RawOp, line: usize| -> Result<Operand, ParseError> {
        Ok(match o {
            RawOp::Int(v) => Operand::Int(*v),
            RawOp::Real(v) => Operand::Real(*v),
            RawOp::Null => Operand::Null,
            RawOp::Name(n, col) => {
                if is_local(n) {
                    Operand::Local(n.clone())
                } else if let Some(g) = globals.get(n.as_str()) {
                    if g.is_array() {
                        Operand::ArrayRef(n.clone())
                    } else {
                        Operand::Global(n.clone())
                    }
                } else {
                    return Err(ParseError { line, col: *col, message: format!("unknown identifier '{n}'") });
                }
            }
        })
    };
    let place = |(n, col): &(String, usize), line: usize| -> Result<Place, ParseError> {
        if let Some(g) = globals.get(n.as_str()) {
            if g.is_array() {
                return Err(ParseError { line, col: *col, message: format!("cannot assign to array '{n}'") });
            }
            return Ok(Place::Global(n.clone()));
        }
        Ok(Place::Local(n.clone()))
    };
    let array = |(n, col): &(String, usize), line: usize| -> Result<Place, ParseError> {
        if f.params.iter().any(|p| &p.name == n) {
            return Ok(Place::Local(n.clone()));
        }
        match globals.get(n.as_str()) {
            Some(g) if g.is_array() => Ok(Place::Global(n.clone())),
            Some(_) => Err(ParseError { line, col: *col, message: format!("'{n}' is not an array") }),
            None => Err(ParseError { line, col: *col, message: format!("unknown identifier '{n}'") }),
        }
    };
    let label = |(l, col): &(String, usize), line: usize| -> Result<String, ParseError> {
        if labels.contains(l.as_str()) {
            Ok(l.clone())
        } else {
            Err(ParseError { line, col: *col, message: format!("unknown identifier: label '{l}'") })
        }
    };

    let mut blocks = Vec::new();
    for b in &f.blocks {
        let mut instrs = Vec::new();
        for (line, ins) in &b.instrs {
            let line = *line;
            let kind = match ins {
                RawInstr::Store { array: a, index, value } => InstrKind::Store {
                    array: array(a, line)?,
                    index: op(index, line)?,
                    value: op(value, line)?,
                },
                RawInstr::Call { callee, args } => InstrKind::Call {
                    dst: None,
                    callee: callee.clone(),
                    args: args.iter().map(|a| op(a, line)).collect::<Result<_, _>>()?,
                },
                RawInstr::Assign { dst, rhs } => {
                    let d = place(dst, line)?;
                    match rhs {
                        RawRhs::Copy(a) => InstrKind::Copy { dst: d, src: op(a, line)? },
                        RawRhs::Unary(u, a) => InstrKind::Unary { dst: d, op: *u, src: op(a, line)? },
                        RawRhs::Binary(bop, a, b2) => InstrKind::Binary { dst: d, op: *bop, lhs: op(a, line)?, rhs: op(b2, line)? },
                        RawRhs::Load(a, i) => InstrKind::Load { dst: d, array: array(a, line)?, index: op(i, line)? },
                        RawRhs::Field(n, fld) => InstrKind::Field { dst: d, node: op(n, line)?, field: *fld },
                        RawRhs::Call(callee, args) => InstrKind::Call {
                            dst: Some(d),
                            callee: callee.clone(),
                            args: args.iter().map(|a| op(a, line)).collect::<Result<_, _>>()?,
                        },
                    }
                }
            };
            instrs.push(Instr { id: InstrId(0), kind });
        }
        let (line, t) = b.term.as_ref().expect("checked at close");
        let line = *line;
        let kind = match t {
            RawTerm::Jump(l) => TermKind::Jump(label(l, line)?),
            RawTerm::Branch(c, t1, t2) => TermKind::Branch { cond: op(c, line)?, then_label: label(t1, line)?, else_label: label(t2, line)? },
            RawTerm::Return(v) => TermKind::Return(v.as_ref().map(|v| op(v, line)).transpose()?),
        };
        blocks.push(Block { label: b.label.clone(), instrs, term: Terminator { id: InstrId(0), kind } });
    }
    let mut func = Function { name: f.name.clone(), params: f.params.clone(), locals: Vec::new(), pure: f.pure, blocks };
    func.renumber();
    Ok(func)
}
