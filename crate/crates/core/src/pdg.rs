//! Program dependence graphs over a function body or one of its loops.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{Cfg, EffectSummary, Function, InstrId, LoopInfo, Operand, Program, TermKind};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum PdgError {
    #[error("region is not a natural loop of '{0}'")]
    NotALoop(String),
    #[error("unknown node {0}")]
    UnknownNode(InstrId),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    Function,
    Loop(LoopInfo),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepKind {
    Flow,
    Anti,
    Output,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DataEdge {
    pub src: InstrId,
    pub dst: InstrId,
    pub loc: String,
    pub carried: bool,
    pub dep: DepKind,
    /// True for global or array storage, false for scalar locals.
    pub memory: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ControlEdge {
    pub src: InstrId,
    pub dst: InstrId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pdg {
    pub function: String,
    pub region: Region,
    pub nodes: BTreeSet<InstrId>,
    pub data: Vec<DataEdge>,
    pub control: Vec<ControlEdge>,
    /// The single in-loop update of each loop's induction variable.
    pub induction_updates: BTreeSet<InstrId>,
    /// Nodes that call a user function.
    pub calls: BTreeSet<InstrId>,
    /// One-line rendering of every node.
    pub labels: BTreeMap<InstrId, String>,
}

/// A structured control construct: a loop or a two-way branch.
#[derive(Clone, Debug)]
pub(crate) struct Construct {
    /// The branch terminator deciding the construct.
    pub branch: InstrId,
    pub branch_block: usize,
    pub blocks: BTreeSet<usize>,
    pub is_loop: bool,
}

/// Finds every loop and if construct of `f`.
pub(crate) fn constructs(f: &Function, cfg: &Cfg, loops: &[LoopInfo]) -> Vec<Construct> {
    let mut out = Vec::new();
    let mut loop_headers = BTreeSet::new();
    for l in loops {
        let h = l.header_index(f);
        loop_headers.insert(h);
        if f.blocks[h].term.is_branch() {
            out.push(Construct {
                branch: f.blocks[h].term.id,
                branch_block: h,
                blocks: l.block_indices(f).into_iter().collect(),
                is_loop: true,
            });
        }
    }
    for (c, b) in f.blocks.iter().enumerate() {
        if !b.term.is_branch() || loop_headers.contains(&c) || !cfg.reachable[c] {
            continue;
        }
        let stop = cfg.ipdom[c];
        let mut region = BTreeSet::new();
        let mut stack: Vec<usize> = cfg.succs[c].clone();
        while let Some(x) = stack.pop() {
            if Some(x) == stop || x == c || !region.insert(x) {
                continue;
            }
            stack.extend(cfg.succs[x].iter().copied());
        }
        out.push(Construct { branch: b.term.id, branch_block: c, blocks: region, is_loop: false });
    }
    out
}

/// The innermost construct containing block `b`, if any.
pub(crate) fn innermost(cons: &[Construct], b: usize) -> Option<&Construct> {
    cons.iter()
        .filter(|c| c.blocks.contains(&b))
        .min_by_key(|c| (c.blocks.len(), c.branch))
}

fn is_node(f: &Function, id: InstrId) -> bool {
    match f.terminator(id) {
        Some(t) => !matches!(t.kind, TermKind::Jump(_)),
        None => true,
    }
}

/// Builds the dependence graph of `f` restricted to `region`.
pub fn build_pdg(p: &Program, f: &Function, region: &Region) -> Result<Pdg, PdgError> {
    let sums = EffectSummary::compute(p);
    build_pdg_with(&sums, f, region)
}

pub(crate) fn build_pdg_with(sums: &BTreeMap<String, EffectSummary>, f: &Function, region: &Region) -> Result<Pdg, PdgError> {
    let cfg = Cfg::new(f);
    let all_loops = crate::ir::find_loops(f).map_err(|_| PdgError::NotALoop(f.name.clone()))?;
    let (blocks, loops): (BTreeSet<usize>, Vec<LoopInfo>) = match region {
        Region::Function => ((0..f.blocks.len()).filter(|&b| cfg.reachable[b]).collect(), all_loops.clone()),
        Region::Loop(l) => {
            if l.function != f.name || !all_loops.iter().any(|x| x.header == l.header && x.body == l.body) {
                return Err(PdgError::NotALoop(f.name.clone()));
            }
            let body: BTreeSet<usize> = l.block_indices(f).into_iter().collect();
            let inner = all_loops
                .iter()
                .filter(|x| x.body.iter().all(|b| l.contains(b)))
                .cloned()
                .collect();
            (body, inner)
        }
    };

    // Back edges inside the region (of the region loop and nested loops).
    let back: BTreeSet<(usize, usize)> = cfg
        .back_edges()
        .into_iter()
        .filter(|(a, b)| blocks.contains(a) && blocks.contains(b))
        .collect();

    let mut nodes = BTreeSet::new();
    let mut labels = BTreeMap::new();
    for &b in &blocks {
        let blk = &f.blocks[b];
        for i in &blk.instrs {
            nodes.insert(i.id);
        }
        if is_node(f, blk.term.id) {
            nodes.insert(blk.term.id);
        }
    }
    for &n in &nodes {
        labels.insert(n, f.describe(n));
    }
    let calls = nodes
        .iter()
        .copied()
        .filter(|&n| f.instr(n).and_then(|i| i.callee()).is_some_and(|c| crate::ir::Intrinsic::from_name(c).is_none()))
        .collect();

    let mut data: BTreeSet<DataEdge> = BTreeSet::new();
    let loop_sets: Vec<BTreeSet<usize>> = loops.iter().map(|l| l.block_indices(f).into_iter().collect()).collect();
    scalar_edges(f, &cfg, &blocks, &back, &loop_sets, &mut data);
    memory_edges(sums, f, &cfg, &blocks, &back, &loop_sets, &mut data);

    // Structural control dependence.
    let cons: Vec<Construct> = constructs(f, &cfg, &loops)
        .into_iter()
        .filter(|c| blocks.contains(&c.branch_block))
        .collect();
    let mut control = BTreeSet::new();
    for &b in &blocks {
        let Some(c) = innermost(&cons, b) else { continue };
        let blk = &f.blocks[b];
        for id in blk.instrs.iter().map(|i| i.id).chain([blk.term.id]) {
            if nodes.contains(&id) && id != c.branch {
                control.insert(ControlEdge { src: c.branch, dst: id });
            }
        }
    }

    let mut induction_updates = BTreeSet::new();
    for l in &loops {
        let Some(v) = &l.induction else { continue };
        for b in l.block_indices(f) {
            if b == l.header_index(f) {
                continue;
            }
            for i in &f.blocks[b].instrs {
                if i.local_def() == Some(v.as_str()) {
                    induction_updates.insert(i.id);
                }
            }
        }
    }

    Ok(Pdg {
        function: f.name.clone(),
        region: region.clone(),
        nodes,
        data: data.into_iter().collect(),
        control: control.into_iter().collect(),
        induction_updates,
        calls,
        labels,
    })
}

/// Reaching definitions with an iteration tag: tag 1 means the definition
/// crossed a back edge inside the region before reaching the point.
fn scalar_edges(
    f: &Function,
    cfg: &Cfg,
    blocks: &BTreeSet<usize>,
    back: &BTreeSet<(usize, usize)>,
    loop_sets: &[BTreeSet<usize>],
    out: &mut BTreeSet<DataEdge>,
) {
    // def sites: (id, var)
    let mut defs: Vec<(InstrId, &str)> = Vec::new();
    for &b in blocks {
        for i in &f.blocks[b].instrs {
            if let Some(v) = i.local_def() {
                defs.push((i.id, v));
            }
        }
    }
    if defs.is_empty() {
        return;
    }
    let nd = defs.len();
    let def_index: HashMap<InstrId, usize> = defs.iter().enumerate().map(|(k, (id, _))| (*id, k)).collect();
    let mut by_var: HashMap<&str, Vec<usize>> = HashMap::new();
    for (k, (_, v)) in defs.iter().enumerate() {
        by_var.entry(v).or_default().push(k);
    }
    // Facts are bit positions: 2*def + tag.
    let words = (2 * nd).div_ceil(64);
    type Bits = Vec<u64>;
    let set = |s: &mut Bits, k: usize| s[k / 64] |= 1 << (k % 64);
    let get = |s: &Bits, k: usize| s[k / 64] >> (k % 64) & 1 == 1;

    let transfer = |b: usize, inp: &Bits| -> Bits {
        let mut s = inp.clone();
        for i in &f.blocks[b].instrs {
            if let Some(v) = i.local_def() {
                for &k in &by_var[v] {
                    s[(2 * k) / 64] &= !(1 << ((2 * k) % 64));
                    s[(2 * k + 1) / 64] &= !(1 << ((2 * k + 1) % 64));
                }
                set(&mut s, 2 * def_index[&i.id]);
            }
        }
        s
    };
    let n = f.blocks.len();
    let mut ins: Vec<Bits> = vec![vec![0; words]; n];
    let mut outs: Vec<Bits> = vec![vec![0; words]; n];
    let order: Vec<usize> = cfg.rpo.iter().copied().filter(|b| blocks.contains(b)).collect();
    let mut changed = true;
    while changed {
        changed = false;
        for &b in &order {
            let mut inp = vec![0u64; words];
            for &pr in &cfg.preds[b] {
                if !blocks.contains(&pr) {
                    continue;
                }
                if back.contains(&(pr, b)) {
                    // promote every fact to tag 1
                    for k in 0..nd {
                        if get(&outs[pr], 2 * k) || get(&outs[pr], 2 * k + 1) {
                            set(&mut inp, 2 * k + 1);
                        }
                    }
                } else {
                    for w in 0..words {
                        inp[w] |= outs[pr][w];
                    }
                }
            }
            let o = transfer(b, &inp);
            if o != outs[b] || inp != ins[b] {
                ins[b] = inp;
                outs[b] = o;
                changed = true;
            }
        }
    }
    for &b in &order {
        let mut s = ins[b].clone();
        let blk = &f.blocks[b];
        let mut emit = |s: &Bits, uses: std::collections::BTreeSet<&str>, dst: InstrId| {
            for u in uses {
                let Some(ks) = by_var.get(u) else { continue };
                for &k in ks {
                    for tag in 0..2 {
                        if get(s, 2 * k + tag) {
                            out.insert(DataEdge { src: defs[k].0, dst, loc: u.to_string(), carried: tag == 1, dep: DepKind::Flow, memory: false });
                        }
                    }
                }
            }
        };
        for i in &blk.instrs {
            emit(&s, i.local_uses(), i.id);
            if let Some(v) = i.local_def() {
                for &k in &by_var[v] {
                    s[(2 * k) / 64] &= !(1 << ((2 * k) % 64));
                    s[(2 * k + 1) / 64] &= !(1 << ((2 * k + 1) % 64));
                }
                set(&mut s, 2 * def_index[&i.id]);
            }
        }
        if !matches!(blk.term.kind, TermKind::Jump(_)) {
            emit(&s, blk.term.local_uses(), blk.term.id);
        }
    }

    // Within a loop every pair of definitions of one variable is ordered
    // both ways across iterations; keeping them together stops two
    // workers from each owning part of a variable.
    for ks in by_var.values() {
        for &a in ks {
            for &b in ks {
                let (ba, bb) = (f.block_of(defs[a].0).unwrap(), f.block_of(defs[b].0).unwrap());
                if a != b && loop_sets.iter().any(|s| s.contains(&ba) && s.contains(&bb)) {
                    out.insert(DataEdge { src: defs[a].0, dst: defs[b].0, loc: defs[a].1.to_string(), carried: true, dep: DepKind::Output, memory: false });
                }
            }
        }
    }
}

/// Name-based memory dependences, including calls through their summaries.
fn memory_edges(
    sums: &BTreeMap<String, EffectSummary>,
    f: &Function,
    cfg: &Cfg,
    blocks: &BTreeSet<usize>,
    back: &BTreeSet<(usize, usize)>,
    loop_sets: &[BTreeSet<usize>],
    out: &mut BTreeSet<DataEdge>,
) {
    // (id, block, position, reads, writes)
    let mut acc: Vec<(InstrId, usize, usize, BTreeSet<String>, BTreeSet<String>)> = Vec::new();
    for &b in blocks {
        let blk = &f.blocks[b];
        for (k, i) in blk.instrs.iter().enumerate() {
            let (r, w) = crate::ir::access_names(sums, f, i);
            if !r.is_empty() || !w.is_empty() {
                acc.push((i.id, b, k, r, w));
            }
        }
        let tr: BTreeSet<String> = match &blk.term.kind {
            TermKind::Branch { cond: Operand::Global(g), .. } | TermKind::Return(Some(Operand::Global(g))) => BTreeSet::from([g.clone()]),
            _ => BTreeSet::new(),
        };
        if !tr.is_empty() {
            acc.push((blk.term.id, b, blk.instrs.len(), tr, BTreeSet::new()));
        }
    }
    if acc.is_empty() {
        return;
    }
    // Forward reachability without back edges.
    let n = f.blocks.len();
    let mut reach = vec![vec![false; n]; n];
    for &s in blocks {
        let mut stack = vec![s];
        while let Some(x) = stack.pop() {
            for &y in &cfg.succs[x] {
                if blocks.contains(&y) && !back.contains(&(x, y)) && !reach[s][y] {
                    reach[s][y] = true;
                    stack.push(y);
                }
            }
        }
    }
    for a in &acc {
        for b in &acc {
            let intra = (a.1 == b.1 && a.2 < b.2) || (a.1 != b.1 && reach[a.1][b.1]);
            let carried = loop_sets.iter().any(|s| s.contains(&a.1) && s.contains(&b.1));
            if !intra && !carried {
                continue;
            }
            let mut add = |loc: &String, dep: DepKind| {
                if intra && a.0 != b.0 {
                    out.insert(DataEdge { src: a.0, dst: b.0, loc: loc.clone(), carried: false, dep, memory: true });
                }
                if carried {
                    out.insert(DataEdge { src: a.0, dst: b.0, loc: loc.clone(), carried: true, dep, memory: true });
                }
            };
            for l in a.4.intersection(&b.3) {
                add(l, DepKind::Flow);
            }
            for l in a.3.intersection(&b.4) {
                add(l, DepKind::Anti);
            }
            for l in a.4.intersection(&b.4) {
                add(l, DepKind::Output);
            }
        }
    }
}

impl Pdg {
    /// Predecessors of every node over data (all kinds) and control edges.
    pub fn preds(&self) -> BTreeMap<InstrId, BTreeSet<InstrId>> {
        let mut m: BTreeMap<InstrId, BTreeSet<InstrId>> = self.nodes.iter().map(|&n| (n, BTreeSet::new())).collect();
        for e in &self.data {
            m.get_mut(&e.dst).unwrap().insert(e.src);
        }
        for e in &self.control {
            m.get_mut(&e.dst).unwrap().insert(e.src);
        }
        m
    }

    /// Successor lists over a dense index of the nodes (in `nodes` order).
    pub fn adjacency(&self) -> (Vec<InstrId>, Vec<Vec<usize>>) {
        let ids: Vec<InstrId> = self.nodes.iter().copied().collect();
        let index: HashMap<InstrId, usize> = ids.iter().enumerate().map(|(k, &i)| (i, k)).collect();
        let mut adj = vec![Vec::new(); ids.len()];
        for (s, d) in self.data.iter().map(|e| (e.src, e.dst)).chain(self.control.iter().map(|e| (e.src, e.dst))) {
            let (s, d) = (index[&s], index[&d]);
            if !adj[s].contains(&d) {
                adj[s].push(d);
            }
        }
        (ids, adj)
    }

    /// True iff `a` transitively depends on `b` (reflexive).
    pub fn depends_on(&self, a: InstrId, b: InstrId) -> Result<bool, PdgError> {
        for x in [a, b] {
            if !self.nodes.contains(&x) {
                return Err(PdgError::UnknownNode(x));
            }
        }
        let preds = self.preds();
        let mut seen = BTreeSet::from([a]);
        let mut stack = vec![a];
        while let Some(x) = stack.pop() {
            if x == b {
                return Ok(true);
            }
            for &p in &preds[&x] {
                if seen.insert(p) {
                    stack.push(p);
                }
            }
        }
        Ok(false)
    }

    /// Graphviz rendering: data edges solid red, control edges dashed.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph pdg {\n");
        for n in &self.nodes {
            let _ = writeln!(s, "  n{} [label=\"{}: {}\"];", n.0, n, escape(&self.labels[n]));
        }
        for e in &self.data {
            let mut label = format!("{} {}", dep_name(e.dep), e.loc);
            if e.carried {
                label.push_str(" (carried)");
            }
            let _ = writeln!(s, "  n{} -> n{} [color=red, style=solid, label=\"{}\"];", e.src.0, e.dst.0, escape(&label));
        }
        for e in &self.control {
            let _ = writeln!(s, "  n{} -> n{} [color=black, style=dashed];", e.src.0, e.dst.0);
        }
        s.push_str("}\n");
        s
    }

    /// JSON listing with stable field names.
    pub fn to_json(&self) -> serde_json::Value {
        let nodes: Vec<_> = self.nodes.iter().map(|n| serde_json::json!({"id": n, "label": self.labels[n]})).collect();
        let mut edges: Vec<_> = self
            .data
            .iter()
            .map(|e| serde_json::json!({"src": e.src, "dst": e.dst, "kind": "data", "carried": e.carried, "loc": e.loc, "dep": dep_name(e.dep)}))
            .collect();
        edges.extend(self.control.iter().map(|e| serde_json::json!({"src": e.src, "dst": e.dst, "kind": "control", "carried": false, "loc": null})));
        serde_json::json!({"function": self.function, "nodes": nodes, "edges": edges})
    }
}

fn dep_name(d: DepKind) -> &'static str {
    match d {
        DepKind::Flow => "flow",
        DepKind::Anti => "anti",
        DepKind::Output => "output",
    }
}

pub(crate) fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;

    #[test]
    fn single_constant() {
        let p = parse_program("func main() {\nb0:\n  x = 1\n  ret\n}\n").unwrap();
        let g = build_pdg(&p, &p.functions[0], &Region::Function).unwrap();
        assert_eq!(g.nodes.len(), 2); // x = 1 and ret
        assert!(g.data.is_empty() && g.control.is_empty());
    }

    #[test]
    fn loop_carried_scalar() {
        let p = parse_program(
            "func main(n: int) {\nb0:\n  i = 0\n  s = 0\n  jump h\nh:\n  c = i < n\n  br c body exit\nbody:\n  s = s + i\n  i = i + 1\n  jump h\nexit:\n  ret s\n}\n",
        )
        .unwrap();
        let f = &p.functions[0];
        let l = crate::ir::find_loops(f).unwrap().remove(0);
        let g = build_pdg(&p, f, &Region::Loop(l)).unwrap();
        let has = |s: u32, d: u32, carried: bool| g.data.iter().any(|e| e.src.0 == s && e.dst.0 == d && e.carried == carried && e.dep == DepKind::Flow);
        // ids: 0 i=0, 1 s=0, 2 jump, 3 c=i<n, 4 br, 5 s=s+i, 6 i=i+1, 7 jump, 8 ret
        assert!(has(6, 6, true));
        assert!(has(5, 5, true));
        assert!(has(6, 3, true));
        assert!(has(6, 5, true));
        assert!(has(3, 4, false));
        assert!(!g.data.iter().any(|e| e.src == e.dst && !e.carried));
        assert!(g.control.iter().any(|e| e.src.0 == 4 && e.dst.0 == 5));
        assert!(g.control.iter().any(|e| e.src.0 == 4 && e.dst.0 == 3));
        assert_eq!(g.induction_updates, BTreeSet::from([InstrId(6)]));
        assert!(g.depends_on(InstrId(5), InstrId(6)).unwrap());
        assert!(g.to_dot().starts_with("digraph pdg {"));
    }
}
