//! Strongly connected components of a PDG and their acyclic condensation.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::cmp::Reverse;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::ir::InstrId;
use crate::pdg::Pdg;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scc {
    pub id: usize,
    /// Sorted member ids.
    pub members: Vec<InstrId>,
    pub latency: u64,
    pub contains_call: bool,
    pub carries_recurrence: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DagScc {
    pub components: Vec<Scc>,
    pub edges: BTreeSet<(usize, usize)>,
    pub topo_order: Vec<usize>,
    pub component_of: BTreeMap<InstrId, usize>,
}

/// Tarjan's algorithm, iterative. Components come out in reverse
/// topological order of the condensation.
pub fn tarjan(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = adj.len();
    const UNSEEN: usize = usize::MAX;
    let mut index = vec![UNSEEN; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    let mut comps = Vec::new();
    let mut counter = 0;
    for root in 0..n {
        if index[root] != UNSEEN {
            continue;
        }
        let mut call: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = counter;
        low[root] = counter;
        counter += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut k)) = call.last_mut() {
            if *k < adj[v].len() {
                let w = adj[v][*k];
                *k += 1;
                if index[w] == UNSEEN {
                    index[w] = counter;
                    low[w] = counter;
                    counter += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(u, _)) = call.last() {
                    low[u] = low[u].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().unwrap();
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comp.sort_unstable();
                    comps.push(comp);
                }
            }
        }
    }
    comps
}

/// Maximal SCCs of the PDG over data and control edges. Latencies are zero
/// until [`build_dagscc`] assigns them.
pub fn compute_sccs(g: &Pdg) -> Vec<Scc> {
    let (ids, adj) = g.adjacency();
    let mut comps: Vec<Vec<InstrId>> = tarjan(&adj).into_iter().map(|c| c.into_iter().map(|k| ids[k]).collect()).collect();
    comps.sort_by_key(|c| c[0]);
    let mut of = BTreeMap::new();
    for (k, c) in comps.iter().enumerate() {
        for &m in c {
            of.insert(m, k);
        }
    }
    comps
        .into_iter()
        .enumerate()
        .map(|(k, members)| {
            let carries_recurrence = g.data.iter().any(|e| e.carried && of[&e.src] == k && of[&e.dst] == k);
            let contains_call = members.iter().any(|m| g.calls.contains(m));
            Scc { id: k, members, latency: 0, contains_call, carries_recurrence }
        })
        .collect()
}

/// Condenses `g` into a DAG over `sccs`, summing `weight` per component.
pub fn build_dagscc(g: &Pdg, sccs: Vec<Scc>, weight: &dyn Fn(InstrId) -> u64) -> DagScc {
    let mut components = sccs;
    let mut component_of = BTreeMap::new();
    for c in components.iter_mut() {
        c.latency = c.members.iter().map(|&m| weight(m)).sum();
        for &m in &c.members {
            component_of.insert(m, c.id);
        }
    }
    let mut edges = BTreeSet::new();
    for (s, d) in g.data.iter().map(|e| (e.src, e.dst)).chain(g.control.iter().map(|e| (e.src, e.dst))) {
        let (a, b) = (component_of[&s], component_of[&d]);
        if a != b {
            edges.insert((a, b));
        }
    }
    let topo_order = topo_sort(components.len(), &edges, |c| components[c].members[0]);
    DagScc { components, edges, topo_order, component_of }
}

/// Kahn's algorithm, always releasing the ready node with the smallest key.
pub fn topo_sort<K: Ord + Copy>(n: usize, edges: &BTreeSet<(usize, usize)>, key: impl Fn(usize) -> K) -> Vec<usize> {
    let mut indeg = vec![0usize; n];
    let mut succ = vec![Vec::new(); n];
    for &(a, b) in edges {
        indeg[b] += 1;
        succ[a].push(b);
    }
    let mut ready: BinaryHeap<Reverse<(K, usize)>> = (0..n).filter(|&v| indeg[v] == 0).map(|v| Reverse((key(v), v))).collect();
    let mut out = Vec::with_capacity(n);
    while let Some(Reverse((_, v))) = ready.pop() {
        out.push(v);
        for &w in &succ[v] {
            indeg[w] -= 1;
            if indeg[w] == 0 {
                ready.push(Reverse((key(w), w)));
            }
        }
    }
    out
}

impl DagScc {
    pub fn is_acyclic(&self) -> bool {
        topo_sort(self.components.len(), &self.edges, |c| c).len() == self.components.len()
    }

    /// Components reachable from `c` (excluding `c`).
    pub fn descendants(&self, c: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![c];
        while let Some(x) = stack.pop() {
            for &(a, b) in self.edges.range((x, 0)..(x + 1, 0)) {
                debug_assert_eq!(a, x);
                if seen.insert(b) {
                    stack.push(b);
                }
            }
        }
        seen
    }

    /// Components that reach `c` (excluding `c`).
    pub fn ancestors(&self, c: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![c];
        while let Some(x) = stack.pop() {
            for &(a, b) in &self.edges {
                if b == x && seen.insert(a) {
                    stack.push(a);
                }
            }
        }
        seen
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph dagscc {\n");
        for c in &self.components {
            let members: Vec<String> = c.members.iter().map(|m| m.to_string()).collect();
            let _ = writeln!(
                s,
                "  c{} [label=\"scc{} [{}] size={} lat={}{}{}\"];",
                c.id,
                c.id,
                members.join(" "),
                c.members.len(),
                c.latency,
                if c.carries_recurrence { " rec" } else { "" },
                if c.contains_call { " call" } else { "" }
            );
        }
        for (a, b) in &self.edges {
            let _ = writeln!(s, "  c{a} -> c{b};");
        }
        s.push_str("}\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tarjan_basic() {
        // 0 -> 1 -> 2 -> 1, 2 -> 3
        let adj = vec![vec![1], vec![2], vec![1, 3], vec![]];
        let mut comps = tarjan(&adj);
        comps.sort();
        assert_eq!(comps, vec![vec![0], vec![1, 2], vec![3]]);
    }

    #[test]
    fn kahn_prefers_small_keys() {
        let edges = BTreeSet::from([(2, 0)]);
        assert_eq!(topo_sort(3, &edges, |v| v), vec![1, 2, 0]);
    }
}
