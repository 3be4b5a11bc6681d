use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::*;

/// Storage a function can reach beyond its own frame.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Loc {
    Global(String),
    /// An array parameter, by position.
    Param(usize),
}

/// Transitive mod/ref sets of a function over non-local storage.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffectSummary {
    pub mods: BTreeSet<Loc>,
    pub refs: BTreeSet<Loc>,
}

impl EffectSummary {
    /// Summaries for every function, computed to a fixpoint over the call graph.
    pub fn compute(p: &Program) -> BTreeMap<String, EffectSummary> {
        let mut sums: BTreeMap<String, EffectSummary> =
            p.functions.iter().map(|f| (f.name.clone(), EffectSummary::default())).collect();
        loop {
            let mut changed = false;
            for f in &p.functions {
                let mut s = EffectSummary::default();
                for i in f.instrs() {
                    let (r, w) = access_names(&sums, f, i);
                    s.refs.extend(r.into_iter().map(|n| to_loc(f, n)));
                    s.mods.extend(w.into_iter().map(|n| to_loc(f, n)));
                }
                for t in f.blocks.iter().map(|b| &b.term) {
                    if let TermKind::Branch { cond: Operand::Global(g), .. } | TermKind::Return(Some(Operand::Global(g))) = &t.kind {
                        s.refs.insert(Loc::Global(g.clone()));
                    }
                }
                let old = sums.get_mut(&f.name).unwrap();
                if *old != s {
                    *old = s;
                    changed = true;
                }
            }
            if !changed {
                return sums;
            }
        }
    }
}

fn to_loc(f: &Function, name: String) -> Loc {
    match f.param_index(&name) {
        Some(k) => Loc::Param(k),
        None => Loc::Global(name),
    }
}

/// Names of non-local storage (globals or array params of `f`) read and
/// written by `i`, with calls expanded through their summaries.
pub(crate) fn access_names(
    sums: &BTreeMap<String, EffectSummary>,
    f: &Function,
    i: &Instr,
) -> (BTreeSet<String>, BTreeSet<String>) {
    let mut reads = BTreeSet::new();
    let mut writes = BTreeSet::new();
    for o in i.operands() {
        if let Operand::Global(g) = o {
            reads.insert(g.clone());
        }
    }
    if let Some(Place::Global(g)) = i.def() {
        writes.insert(g.clone());
    }
    match &i.kind {
        InstrKind::Load { array, .. } => {
            reads.insert(array.name().to_string());
        }
        InstrKind::Store { array, .. } => {
            writes.insert(array.name().to_string());
        }
        InstrKind::Call { callee, args, .. } => {
            if let Some(s) = sums.get(callee) {
                let map = |l: &Loc| -> Option<String> {
                    match l {
                        Loc::Global(g) => Some(g.clone()),
                        Loc::Param(k) => match args.get(*k)? {
                            Operand::ArrayRef(g) => Some(g.clone()),
                            Operand::Local(n) if f.param_index(n).is_some() => Some(n.clone()),
                            _ => None,
                        },
                    }
                };
                reads.extend(s.refs.iter().filter_map(map));
                writes.extend(s.mods.iter().filter_map(map));
            }
        }
        _ => {}
    }
    (reads, writes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summaries_follow_calls() {
        let p = parse_program(
            "global real g[4]\nglobal real m\nfunc main() {\nb0:\n  call f(g)\n  ret\n}\nfunc f(a: real[]) {\nb0:\n  call h(a)\n  ret\n}\nfunc h(x: real[]) {\nb0:\n  x[0] = m\n  ret\n}\n",
        )
        .unwrap();
        let s = EffectSummary::compute(&p);
        assert!(s["h"].mods.contains(&Loc::Param(0)));
        assert!(s["h"].refs.contains(&Loc::Global("m".into())));
        assert!(s["f"].mods.contains(&Loc::Param(0)));
        assert!(s["main"].mods.contains(&Loc::Global("g".into())));
        assert!(s["main"].refs.contains(&Loc::Global("m".into())));
    }
}
