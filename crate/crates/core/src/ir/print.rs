use std::fmt::Write;

use super::*;

fn operand(o: &Operand) -> String {
    match o {
        Operand::Local(n) | Operand::Global(n) | Operand::ArrayRef(n) => n.clone(),
        Operand::Int(v) => v.to_string(),
        Operand::Real(v) => format!("{v:?}"),
        Operand::Null => "null".into(),
    }
}

fn args(a: &[Operand]) -> String {
    a.iter().map(operand).collect::<Vec<_>>().join(", ")
}

pub(crate) fn instr_to_string(i: &Instr) -> String {
    match &i.kind {
        InstrKind::Copy { dst, src } => format!("{} = {}", dst.name(), operand(src)),
        InstrKind::Unary { dst, op, src } => {
            let o = match op {
                UnOp::Neg => "neg",
                UnOp::Not => "not",
            };
            format!("{} = {o} {}", dst.name(), operand(src))
        }
        InstrKind::Binary { dst, op, lhs, rhs } => {
            format!("{} = {} {} {}", dst.name(), operand(lhs), op.symbol(), operand(rhs))
        }
        InstrKind::Load { dst, array, index } => {
            format!("{} = {}[{}]", dst.name(), array.name(), operand(index))
        }
        InstrKind::Store { array, index, value } => {
            format!("{}[{}] = {}", array.name(), operand(index), operand(value))
        }
        InstrKind::Field { dst, node, field } => {
            format!("{} = {}.{}", dst.name(), operand(node), field.name())
        }
        InstrKind::Call { dst: Some(d), callee, args: a } => format!("{} = call {callee}({})", d.name(), args(a)),
        InstrKind::Call { dst: None, callee, args: a } => format!("call {callee}({})", args(a)),
    }
}

pub(crate) fn term_to_string(t: &Terminator) -> String {
    match &t.kind {
        TermKind::Jump(l) => format!("jump {l}"),
        TermKind::Branch { cond, then_label, else_label } => {
            format!("br {} {then_label} {else_label}", operand(cond))
        }
        TermKind::Return(None) => "ret".into(),
        TermKind::Return(Some(v)) => format!("ret {}", operand(v)),
    }
}

fn kind_name(k: ParamKind) -> &'static str {
    match k {
        ParamKind::Int => "int",
        ParamKind::Real => "real",
        ParamKind::RealArray => "real[]",
        ParamKind::Node => "node",
    }
}

pub(crate) fn function_to_string(f: &Function) -> String {
    let mut s = String::new();
    let params = f
        .params
        .iter()
        .map(|p| format!("{}: {}", p.name, kind_name(p.kind)))
        .collect::<Vec<_>>()
        .join(", ");
    let pure = if f.pure { " pure" } else { "" };
    let _ = writeln!(s, "func {}({params}){pure} {{", f.name);
    for b in &f.blocks {
        let _ = writeln!(s, "{}:", b.label);
        for i in &b.instrs {
            let _ = writeln!(s, "  {}", instr_to_string(i));
        }
        let _ = writeln!(s, "  {}", term_to_string(&b.term));
    }
    s.push_str("}\n");
    s
}

pub(crate) fn program_to_string(p: &Program) -> String {
    let mut s = format!("entry {}\n", p.entry);
    if !p.globals.is_empty() {
        s.push('\n');
    }
    for g in &p.globals {
        let k = match g.kind {
            ScalarKind::Int => "int",
            ScalarKind::Real => "real",
        };
        match g.len {
            Some(n) => {
                let _ = writeln!(s, "global {k} {}[{n}]", g.name);
            }
            None => {
                let _ = writeln!(s, "global {k} {}", g.name);
            }
        }
    }
    for f in &p.functions {
        s.push('\n');
        s.push_str(&function_to_string(f));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::super::parse_program;

    #[test]
    fn roundtrip_small() {
        let src = "entry main\n\nglobal real b[8]\nglobal int k\n\nfunc main(n: node, a: real[]) {\nb0:\n  x = n.data\n  y = x * 1e-7\n  z = neg y\n  a[0] = z\n  k = k + 1\n  w = call cos(z)\n  br n b1 b2\nb1:\n  jump b2\nb2:\n  ret w\n}\n";
        let p = parse_program(src).unwrap();
        let printed = p.pretty();
        assert_eq!(printed, src);
        assert_eq!(parse_program(&printed).unwrap(), p);
    }
}
