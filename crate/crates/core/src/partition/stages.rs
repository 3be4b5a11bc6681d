use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::pdg::Pdg;
use crate::scc::DagScc;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub id: usize,
    pub components: Vec<usize>,
    pub latency: u64,
    /// Variables defined here and used by a later stage.
    pub produces: BTreeSet<String>,
    /// Variables used here and defined by an earlier stage.
    pub consumes: BTreeSet<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePlan {
    pub stages: Vec<Stage>,
    pub degenerate: bool,
}

impl StagePlan {
    pub fn stage_of(&self) -> BTreeMap<usize, usize> {
        let mut m = BTreeMap::new();
        for s in &self.stages {
            for &c in &s.components {
                m.insert(c, s.id);
            }
        }
        m
    }

    /// Every DAG edge goes to the same or a later stage.
    pub fn is_legal(&self, d: &DagScc) -> bool {
        let of = self.stage_of();
        of.len() == d.components.len() && d.edges.iter().all(|(a, b)| of[a] <= of[b])
    }

    /// Fills `produces`/`consumes` from the scalar data edges of `g`.
    pub fn annotate(&mut self, d: &DagScc, g: &Pdg) {
        let of = self.stage_of();
        for s in &mut self.stages {
            s.produces.clear();
            s.consumes.clear();
        }
        for e in g.data.iter().filter(|e| !e.memory) {
            let (a, b) = (of[&d.component_of[&e.src]], of[&d.component_of[&e.dst]]);
            if a < b {
                self.stages[a].produces.insert(e.loc.clone());
                self.stages[b].consumes.insert(e.loc.clone());
            }
        }
    }
}

/// Stage assignment with the recurrences that are not fed by a call pinned
/// to stage 0.
pub fn assign_stages(d: &DagScc, max_stages: usize) -> StagePlan {
    assign_stages_with(d, max_stages, &BTreeSet::new())
}

/// Like [`assign_stages`], also pinning `first` (and everything it depends
/// on) to stage 0. Remaining components become one unit each in
/// topological order; the adjacent pair with the smallest combined latency
/// is merged until at most `max_stages` units remain.
pub fn assign_stages_with(d: &DagScc, max_stages: usize, first: &BTreeSet<usize>) -> StagePlan {
    let max_stages = max_stages.max(1);
    let below_call: BTreeSet<usize> = d
        .components
        .iter()
        .filter(|c| c.contains_call)
        .flat_map(|c| {
            let mut s = d.descendants(c.id);
            s.insert(c.id);
            s
        })
        .collect();
    let mut seeds: BTreeSet<usize> = first.clone();
    seeds.extend(d.components.iter().filter(|c| c.carries_recurrence && !below_call.contains(&c.id)).map(|c| c.id));
    let mut forced = seeds.clone();
    for s in &seeds {
        forced.extend(d.ancestors(*s));
    }

    let mut units: Vec<Vec<usize>> = Vec::new();
    let pinned: Vec<usize> = d.topo_order.iter().copied().filter(|c| forced.contains(c)).collect();
    if !pinned.is_empty() {
        units.push(pinned);
    }
    units.extend(d.topo_order.iter().copied().filter(|c| !forced.contains(c)).map(|c| vec![c]));
    let lat = |u: &Vec<usize>| u.iter().map(|&c| d.components[c].latency).sum::<u64>();
    while units.len() > max_stages {
        let mut best = 0;
        let mut best_cost = u64::MAX;
        for k in 0..units.len() - 1 {
            let c = lat(&units[k]) + lat(&units[k + 1]);
            if c < best_cost {
                best = k;
                best_cost = c;
            }
        }
        let next = units.remove(best + 1);
        units[best].extend(next);
    }
    let stages: Vec<Stage> = units
        .into_iter()
        .enumerate()
        .map(|(id, components)| Stage {
            id,
            latency: components.iter().map(|&c| d.components[c].latency).sum(),
            components,
            produces: BTreeSet::new(),
            consumes: BTreeSet::new(),
        })
        .collect();
    let degenerate = stages.len() < 2;
    StagePlan { stages, degenerate }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scc::{topo_sort, Scc};

    fn dag(lat: &[u64], rec: &[usize], call: &[usize], edges: &[(usize, usize)]) -> DagScc {
        let components = lat
            .iter()
            .enumerate()
            .map(|(k, &l)| Scc {
                id: k,
                members: vec![crate::ir::InstrId(k as u32)],
                latency: l,
                contains_call: call.contains(&k),
                carries_recurrence: rec.contains(&k),
            })
            .collect();
        let edges: BTreeSet<_> = edges.iter().copied().collect();
        let topo_order = topo_sort(lat.len(), &edges, |c| c);
        let component_of = (0..lat.len()).map(|k| (crate::ir::InstrId(k as u32), k)).collect();
        DagScc { components, edges, topo_order, component_of }
    }

    #[test]
    fn recurrence_then_call() {
        let d = dag(&[3, 100], &[0], &[1], &[(0, 1)]);
        let s = assign_stages(&d, 2);
        assert_eq!(s.stages.len(), 2);
        assert_eq!(s.stages[0].components, vec![0]);
        assert_eq!(s.stages[1].components, vec![1]);
        assert!(!s.degenerate);
    }

    #[test]
    fn single_component_is_degenerate() {
        let d = dag(&[5], &[], &[], &[]);
        let s = assign_stages(&d, 2);
        assert!(s.degenerate);
        assert_eq!(s.stages.len(), 1);
    }

    #[test]
    fn chain_of_five() {
        let d = dag(&[1, 2, 3, 4, 5], &[], &[], &[(0, 1), (1, 2), (2, 3), (3, 4)]);
        let s = assign_stages(&d, 2);
        assert_eq!(s.stages.len(), 2);
        assert!(s.is_legal(&d));
    }
}
