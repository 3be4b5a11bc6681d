use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::effects::access_names;
use super::*;

/// A structural problem, naming the offending entity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub entity: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity, self.message)
    }
}

/// Checks the structural invariants of `p`. An empty result means valid.
pub fn validate(p: &Program) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut diag = |entity: String, message: String| out.push(Diagnostic { entity, message });

    if p.function(&p.entry).is_none() {
        diag(format!("entry {}", p.entry), "entry not found".into());
    }
    let names = p
        .globals
        .iter()
        .map(|g| ("global", g.name.as_str()))
        .chain(p.functions.iter().map(|f| ("function", f.name.as_str())))
        .chain(p.functions.iter().flat_map(|f| f.params.iter().map(|x| ("param", x.name.as_str()))))
        .chain(p.functions.iter().flat_map(|f| f.blocks.iter().map(|b| ("block", b.label.as_str()))))
        .chain(p.functions.iter().flat_map(|f| f.instrs().filter_map(|i| i.local_def()).map(|n| ("variable", n))));
    for (what, n) in names {
        if !super::parse::is_ident(n) {
            diag(format!("{what} {n:?}"), "not a valid identifier".into());
        }
    }
    let mut seen = HashSet::new();
    for g in &p.globals {
        if !seen.insert(g.name.as_str()) {
            diag(format!("global {}", g.name), "duplicate name".into());
        }
        if g.len == Some(0) {
            diag(format!("global {}", g.name), "array length must be positive".into());
        }
    }
    for f in &p.functions {
        if !seen.insert(f.name.as_str()) {
            diag(format!("function {}", f.name), "duplicate name".into());
        }
        if Intrinsic::from_name(&f.name).is_some() {
            diag(format!("function {}", f.name), "shadows an intrinsic".into());
        }
    }

    let sums = EffectSummary::compute(p);
    for f in &p.functions {
        check_function(p, f, &sums, &mut diag);
    }
    out
}

fn check_function(
    p: &Program,
    f: &Function,
    sums: &std::collections::BTreeMap<String, EffectSummary>,
    diag: &mut impl FnMut(String, String),
) {
    let fe = |s: &str| format!("{}: {s}", f.name);
    if f.blocks.is_empty() {
        diag(format!("function {}", f.name), "no blocks".into());
        return;
    }
    let mut labels = HashSet::new();
    for b in &f.blocks {
        if !labels.insert(b.label.as_str()) {
            diag(fe(&format!("block {}", b.label)), "duplicate label".into());
        }
        for t in b.term.targets() {
            if f.block_index(t).is_none() {
                diag(fe(&format!("block {}", b.label)), format!("unknown target label '{t}'"));
            }
        }
    }
    let mut ids: Vec<u32> = f.blocks.iter().flat_map(|b| b.instrs.iter().map(|i| i.id.0).chain([b.term.id.0])).collect();
    ids.sort_unstable();
    if ids.iter().enumerate().any(|(k, &id)| id as usize != k) {
        diag(format!("function {}", f.name), "instruction ids are not dense and unique".into());
    }
    let params: HashSet<&str> = f.params.iter().map(|p| p.name.as_str()).collect();
    for prm in &f.params {
        if p.global(&prm.name).is_some() {
            diag(fe(&format!("param {}", prm.name)), "shadows a global".into());
        }
    }
    let defined: BTreeSet<&str> = f.instrs().filter_map(|i| i.local_def()).collect();
    for v in &defined {
        if p.global(v).is_some() {
            diag(fe(&format!("variable {v}")), "shadows a global".into());
        }
    }
    let kind_of = |n: &str| f.params.iter().find(|p| p.name == n).map(|p| p.kind);

    let rets: Vec<&Terminator> = f.blocks.iter().map(|b| &b.term).filter(|t| matches!(t.kind, TermKind::Return(_))).collect();
    if rets.len() != 1 {
        diag(format!("function {}", f.name), format!("expected exactly one exit block, found {}", rets.len()));
    }

    let check_operand = |o: &Operand, at: &str, diag: &mut dyn FnMut(String, String)| match o {
        Operand::Local(n) => {
            if !params.contains(n.as_str()) && !defined.contains(n.as_str()) {
                diag(fe(at), format!("unknown variable '{n}'"));
            }
        }
        Operand::Global(g) => match p.global(g) {
            Some(d) if !d.is_array() => {}
            Some(_) => diag(fe(at), format!("array '{g}' used as a scalar")),
            None => diag(fe(at), format!("unknown global '{g}'")),
        },
        Operand::ArrayRef(g) => match p.global(g) {
            Some(d) if d.is_array() => {}
            _ => diag(fe(at), format!("unknown array '{g}'")),
        },
        _ => {}
    };

    for b in &f.blocks {
        for i in &b.instrs {
            let at = format!("{} `{}`", i.id, print::instr_to_string(i));
            for o in i.operands() {
                check_operand(o, &at, diag);
            }
            match i.def() {
                Some(Place::Global(g)) => match p.global(g) {
                    Some(d) if !d.is_array() => {}
                    _ => diag(fe(&at), format!("'{g}' is not a global scalar")),
                },
                Some(Place::Local(n)) => {
                    if matches!(kind_of(n), Some(ParamKind::RealArray)) {
                        diag(fe(&at), format!("cannot assign to array parameter '{n}'"));
                    }
                }
                None => {}
            }
            match &i.kind {
                InstrKind::Load { array, .. } | InstrKind::Store { array, .. } => match array {
                    Place::Global(g) => {
                        if !p.global(g).is_some_and(GlobalDecl::is_array) {
                            diag(fe(&at), format!("'{g}' is not a global array"));
                        }
                    }
                    Place::Local(n) => {
                        if kind_of(n) != Some(ParamKind::RealArray) {
                            diag(fe(&at), format!("'{n}' is not an array parameter"));
                        }
                    }
                },
                InstrKind::Call { callee, args, dst } => {
                    if let Some(g) = p.function(callee) {
                        if dst.is_some() && !g.returns_value() {
                            diag(fe(&at), format!("uses the result of '{callee}', which returns no value"));
                        }
                        if g.params.len() != args.len() {
                            diag(fe(&at), format!("call to '{callee}' with {} argument(s), expected {}", args.len(), g.params.len()));
                        } else {
                            for (a, prm) in args.iter().zip(&g.params) {
                                let is_array = match a {
                                    Operand::ArrayRef(_) => true,
                                    Operand::Local(n) => kind_of(n) == Some(ParamKind::RealArray),
                                    _ => false,
                                };
                                if is_array != (prm.kind == ParamKind::RealArray) {
                                    diag(fe(&at), format!("argument for '{}' has the wrong kind", prm.name));
                                }
                            }
                        }
                        if f.pure && !g.pure {
                            diag(fe(&at), format!("purity violation: calls non-pure '{callee}'"));
                        }
                    } else if let Some(intr) = Intrinsic::from_name(callee) {
                        if intr.arity() != args.len() {
                            diag(fe(&at), format!("intrinsic '{callee}' expects {} argument(s)", intr.arity()));
                        }
                    } else {
                        diag(fe(&at), format!("unresolved call '{callee}'"));
                    }
                }
                _ => {}
            }
            if f.pure {
                let (_, writes) = access_names(sums, f, i);
                for w in writes {
                    diag(fe(&at), format!("purity violation: writes '{w}'"));
                }
            }
        }
        let at = format!("{} `{}`", b.term.id, print::term_to_string(&b.term));
        match &b.term.kind {
            TermKind::Branch { cond, .. } => check_operand(cond, &at, diag),
            TermKind::Return(Some(v)) => check_operand(v, &at, diag),
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unresolved_and_purity() {
        let p = parse_program("global real g[2]\nfunc main() {\nb0:\n  call nope(1)\n  ret\n}\nfunc f(i: int) pure {\nb0:\n  g[i] = 1.0\n  ret\n}\n").unwrap();
        let d = validate(&p);
        assert_eq!(d.len(), 2, "{d:?}");
        assert!(d[0].message.contains("unresolved call"));
        assert!(d[1].message.contains("purity violation"));
    }
}
