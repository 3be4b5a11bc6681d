//! Intra-procedural backward static slicing.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{
    find_loops, Block, Cfg, EffectSummary, Function, InstrId, Operand, ParamKind, Place, Program, TermKind, Terminator,
};
use crate::pdg::{constructs, DepKind, Pdg};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum SliceError {
    #[error("nothing to slice in '{0}'")]
    NothingToSlice(String),
    #[error("slice of '{0}' is not materializable: {1}")]
    Internal(String, String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CriterionKind {
    /// A `real[]` parameter written by the function.
    ArrayParam,
    GlobalArray,
    Return,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub kind: CriterionKind,
    pub seeds: BTreeSet<InstrId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slice {
    pub criterion: Criterion,
    pub instrs: BTreeSet<InstrId>,
    pub control_skeleton: BTreeSet<InstrId>,
    pub params_used: Vec<String>,
    /// Criteria computed by this slice: its own plus any absorbed by filtering.
    pub covers: Vec<String>,
}

impl Slice {
    /// Instructions and skeleton together.
    pub fn all(&self) -> BTreeSet<InstrId> {
        self.instrs.union(&self.control_skeleton).copied().collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlTable {
    /// Construct (its branch terminator) to skeleton instructions.
    pub entries: BTreeMap<InstrId, BTreeSet<InstrId>>,
    /// Construct to the blocks it covers.
    pub regions: BTreeMap<InstrId, BTreeSet<String>>,
}

/// Externally visible outputs of `f`, in declaration order: written array
/// parameters, written global arrays, then the return value.
pub fn collect_criteria(p: &Program, f: &Function) -> Result<Vec<Criterion>, SliceError> {
    let sums = EffectSummary::compute(p);
    let mut writers: BTreeMap<String, BTreeSet<InstrId>> = BTreeMap::new();
    for i in f.instrs() {
        let (_, w) = crate::ir::access_names(&sums, f, i);
        for n in w {
            writers.entry(n).or_default().insert(i.id);
        }
    }
    let mut out = Vec::new();
    for prm in &f.params {
        if prm.kind == ParamKind::RealArray {
            if let Some(s) = writers.get(&prm.name) {
                out.push(Criterion { name: prm.name.clone(), kind: CriterionKind::ArrayParam, seeds: s.clone() });
            }
        }
    }
    for g in &p.globals {
        if g.is_array() {
            if let Some(s) = writers.get(&g.name) {
                out.push(Criterion { name: g.name.clone(), kind: CriterionKind::GlobalArray, seeds: s.clone() });
            }
        }
    }
    let rets: BTreeSet<InstrId> = f
        .blocks
        .iter()
        .filter(|b| matches!(b.term.kind, TermKind::Return(Some(_))))
        .map(|b| b.term.id)
        .collect();
    if !rets.is_empty() {
        out.push(Criterion { name: "return".into(), kind: CriterionKind::Return, seeds: rets });
    }
    if out.is_empty() {
        return Err(SliceError::NothingToSlice(f.name.clone()));
    }
    Ok(out)
}

/// Backward closure from the criterion's seeds over flow and control
/// dependences. Induction updates are included but their own data
/// dependences are not followed; the loop skeleton supplies those.
pub fn compute_slice(f: &Function, g: &Pdg, c: &Criterion) -> Slice {
    let mut data_preds: BTreeMap<InstrId, Vec<InstrId>> = BTreeMap::new();
    let mut ctrl_preds: BTreeMap<InstrId, Vec<InstrId>> = BTreeMap::new();
    for e in &g.data {
        if e.dep == DepKind::Flow {
            data_preds.entry(e.dst).or_default().push(e.src);
        }
    }
    for e in &g.control {
        ctrl_preds.entry(e.dst).or_default().push(e.src);
    }
    let mut visited: BTreeSet<InstrId> = BTreeSet::new();
    let mut stack: Vec<InstrId> = c.seeds.iter().copied().filter(|s| g.nodes.contains(s)).collect();
    while let Some(n) = stack.pop() {
        if !visited.insert(n) {
            continue;
        }
        if !g.induction_updates.contains(&n) {
            stack.extend(data_preds.get(&n).into_iter().flatten().copied());
        }
        stack.extend(ctrl_preds.get(&n).into_iter().flatten().copied());
    }
    let params_used = params_used(f, &visited);
    Slice { criterion: c.clone(), instrs: visited, control_skeleton: BTreeSet::new(), params_used, covers: vec![c.name.clone()] }
}

fn params_used(f: &Function, ids: &BTreeSet<InstrId>) -> Vec<String> {
    let mut used = BTreeSet::new();
    for b in &f.blocks {
        for i in b.instrs.iter().filter(|i| ids.contains(&i.id)) {
            used.extend(i.local_uses().into_iter().map(str::to_string));
        }
        if ids.contains(&b.term.id) {
            used.extend(b.term.local_uses().into_iter().map(str::to_string));
        }
    }
    f.params.iter().filter(|p| used.contains(&p.name)).map(|p| p.name.clone()).collect()
}

/// The skeleton of every loop and branch of `f`.
pub fn build_control_table(f: &Function) -> ControlTable {
    let mut t = ControlTable::default();
    let Ok(loops) = find_loops(f) else { return t };
    let cfg = Cfg::new(f);
    for c in constructs(f, &cfg, &loops) {
        let blk = &f.blocks[c.branch_block];
        let mut sk = BTreeSet::from([c.branch]);
        // the condition's defining chain within the branch block
        let mut want: BTreeSet<String> = blk.term.local_uses().into_iter().map(str::to_string).collect();
        for i in blk.instrs.iter().rev() {
            if let Some(d) = i.local_def() {
                if want.remove(d) {
                    sk.insert(i.id);
                    want.extend(i.local_uses().into_iter().map(str::to_string));
                }
            }
        }
        if c.is_loop {
            let l = loops.iter().find(|l| l.header_index(f) == c.branch_block).unwrap();
            if let Some(v) = &l.induction {
                for (bi, b) in f.blocks.iter().enumerate() {
                    for i in &b.instrs {
                        if i.local_def() != Some(v.as_str()) {
                            continue;
                        }
                        let inside = c.blocks.contains(&bi);
                        // update inside the loop, or an initialization reaching the header
                        if (inside && bi != c.branch_block) || (!inside && cfg.dominates(bi, c.branch_block)) {
                            sk.insert(i.id);
                        }
                    }
                }
            }
        }
        t.regions.insert(c.branch, c.blocks.iter().map(|&b| f.blocks[b].label.clone()).collect());
        t.entries.insert(c.branch, sk);
    }
    t
}

/// Adds the skeleton of every construct containing a slice instruction.
pub fn attach_control(f: &Function, s: &Slice, t: &ControlTable) -> Slice {
    let mut out = s.clone();
    let blocks: BTreeSet<String> = s
        .instrs
        .iter()
        .filter_map(|&i| f.block_of(i))
        .map(|b| f.blocks[b].label.clone())
        .collect();
    for (k, region) in &t.regions {
        if region.iter().any(|b| blocks.contains(b)) {
            out.control_skeleton.extend(t.entries[k].iter().copied());
        }
    }
    let all = out.all();
    out.params_used = params_used(f, &all);
    out
}

/// Drops slices contained in another; among equal slices the first survives.
pub fn filter_redundant(ss: Vec<Slice>) -> Vec<Slice> {
    let sets: Vec<BTreeSet<InstrId>> = ss.iter().map(Slice::all).collect();
    let mut keep: Vec<Option<usize>> = vec![None; ss.len()];
    for i in 0..ss.len() {
        let container = (0..ss.len()).find(|&j| {
            j != i && sets[i].is_subset(&sets[j]) && (sets[i].len() < sets[j].len() || j < i)
        });
        keep[i] = container;
    }
    // Resolve absorption chains to a surviving slice.
    let root = |mut i: usize| {
        while let Some(j) = keep[i] {
            i = j;
        }
        i
    };
    let mut out: Vec<Slice> = Vec::new();
    let mut index: BTreeMap<usize, usize> = BTreeMap::new();
    for i in 0..ss.len() {
        if keep[i].is_none() {
            index.insert(i, out.len());
            out.push(ss[i].clone());
        }
    }
    for i in 0..ss.len() {
        if keep[i].is_some() {
            let r = index[&root(i)];
            for c in &ss[i].covers {
                if !out[r].covers.contains(c) {
                    out[r].covers.push(c.clone());
                }
            }
        }
    }
    out
}

/// Union of two slices, used when there are more slices than workers.
pub fn merge_slices(f: &Function, a: &Slice, b: &Slice) -> Slice {
    let mut out = a.clone();
    out.instrs.extend(b.instrs.iter().copied());
    out.control_skeleton.extend(b.control_skeleton.iter().copied());
    for c in &b.covers {
        if !out.covers.contains(c) {
            out.covers.push(c.clone());
        }
    }
    out.params_used = params_used(f, &out.all());
    out
}

/// Builds a function executing exactly the slice, in source order.
pub fn materialize(f: &Function, s: &Slice, name: &str) -> Result<Function, SliceError> {
    let keep = s.all();
    let cfg = Cfg::new(f);
    let returns_criterion = s.covers.iter().any(|c| c == "return");
    let mut blocks: Vec<Block> = Vec::new();
    for (bi, b) in f.blocks.iter().enumerate() {
        let instrs = b.instrs.iter().filter(|i| keep.contains(&i.id)).cloned().collect();
        let kind = match &b.term.kind {
            TermKind::Jump(l) => TermKind::Jump(l.clone()),
            TermKind::Branch { .. } if keep.contains(&b.term.id) => b.term.kind.clone(),
            TermKind::Branch { .. } => match cfg.ipdom[bi] {
                Some(j) => TermKind::Jump(f.blocks[j].label.clone()),
                None => b.term.kind.clone(),
            },
            TermKind::Return(v) => TermKind::Return(if returns_criterion { v.clone() } else { None }),
        };
        blocks.push(Block { label: b.label.clone(), instrs, term: Terminator { id: b.term.id, kind } });
    }
    let params = f.params.iter().filter(|p| s.params_used.contains(&p.name)).cloned().collect();
    let mut g = Function { name: name.to_string(), params, locals: Vec::new(), pure: f.pure, blocks };
    remove_unreachable(&mut g);
    g.renumber();
    // every local read must be a kept param or defined
    let defined: BTreeSet<&str> = g.instrs().filter_map(|i| i.local_def()).collect();
    for i in g.instrs() {
        for u in i.local_uses() {
            if !defined.contains(u) && !g.params.iter().any(|p| p.name == u) && f.param_index(u).is_some() {
                return Err(SliceError::Internal(f.name.clone(), format!("parameter '{u}' not delivered")));
            }
        }
    }
    Ok(g)
}

fn remove_unreachable(f: &mut Function) {
    let cfg = Cfg::new(f);
    let mut k = 0;
    f.blocks.retain(|_| {
        let r = cfg.reachable[k];
        k += 1;
        r
    });
}

/// Renames global `from` to `to` throughout `f`.
pub fn rename_global(f: &mut Function, from: &str, to: &str) {
    let op = |o: &mut Operand| match o {
        Operand::Global(g) | Operand::ArrayRef(g) if g == from => *g = to.to_string(),
        _ => {}
    };
    let place = |p: &mut Place| {
        if let Place::Global(g) = p {
            if g == from {
                *g = to.to_string();
            }
        }
    };
    for b in &mut f.blocks {
        for i in &mut b.instrs {
            use crate::ir::InstrKind::*;
            match &mut i.kind {
                Copy { dst, src } | Unary { dst, src, .. } => {
                    place(dst);
                    op(src);
                }
                Binary { dst, lhs, rhs, .. } => {
                    place(dst);
                    op(lhs);
                    op(rhs);
                }
                Load { dst, array, index } => {
                    place(dst);
                    place(array);
                    op(index);
                }
                Store { array, index, value } => {
                    place(array);
                    op(index);
                    op(value);
                }
                Field { dst, node, .. } => {
                    place(dst);
                    op(node);
                }
                Call { dst, args, .. } => {
                    if let Some(d) = dst {
                        place(d);
                    }
                    args.iter_mut().for_each(op);
                }
            }
        }
        match &mut b.term.kind {
            TermKind::Branch { cond, .. } => op(cond),
            TermKind::Return(Some(v)) => op(v),
            _ => {}
        }
    }
}

/// Whole pipeline for one function: criteria, slices, control, filtering.
pub fn slice_function(p: &Program, f: &Function) -> Result<(Vec<Slice>, Pdg), SliceError> {
    let criteria = collect_criteria(p, f)?;
    let g = crate::pdg::build_pdg(p, f, &crate::pdg::Region::Function).map_err(|e| SliceError::Internal(f.name.clone(), e.to_string()))?;
    let table = build_control_table(f);
    let slices = criteria.iter().map(|c| attach_control(f, &compute_slice(f, &g, c), &table)).collect();
    Ok((filter_redundant(slices), g))
}
