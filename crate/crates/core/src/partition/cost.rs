use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{find_loops, Function, InstrId, InstrKind, Intrinsic, LoopInfo, Program, TermKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CallCost {
    /// Callee body cost, inlined two levels deep; deeper calls cost the overhead only.
    InlineEstimate,
    Fixed(u64),
}

/// Abstract cycle costs per opcode class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub costs: BTreeMap<String, u64>,
    pub call_cost: CallCost,
    pub default_trip: u64,
}

const INLINE_DEPTH: usize = 2;

pub const OPCODES: [&str; 12] = [
    "copy", "unary", "binary", "load", "store", "field", "call", "transcendental", "conversion", "branch", "jump", "ret",
];

impl Default for LatencyModel {
    fn default() -> Self {
        let mut costs = BTreeMap::new();
        for op in OPCODES {
            let c = match op {
                "load" | "store" | "field" => 3,
                "transcendental" => 20,
                "call" => 5,
                _ => 1,
            };
            costs.insert(op.to_string(), c);
        }
        LatencyModel { costs, call_cost: CallCost::InlineEstimate, default_trip: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum CostError {
    #[error("no candidate loop: no loop in '{0}' calls a function")]
    NoCandidate(String),
    #[error("invalid latency model: {0}")]
    BadModel(String),
    #[error("{0}")]
    Loops(String),
}

impl LatencyModel {
    pub fn check(&self) -> Result<(), CostError> {
        for op in OPCODES {
            match self.costs.get(op) {
                Some(&c) if c >= 1 => {}
                _ => return Err(CostError::BadModel(format!("cost of '{op}' must be >= 1"))),
            }
        }
        if self.default_trip < 1 {
            return Err(CostError::BadModel("default_trip must be >= 1".into()));
        }
        if self.call_cost == CallCost::Fixed(0) {
            return Err(CostError::BadModel("fixed call cost must be >= 1".into()));
        }
        Ok(())
    }

    fn c(&self, op: &str) -> u64 {
        self.costs.get(op).copied().unwrap_or(1)
    }

    pub fn trip(&self, l: &LoopInfo) -> u64 {
        l.static_trip_hint.unwrap_or(self.default_trip)
    }

    /// Cost of one execution of instruction or terminator `id` of `f`.
    pub fn instr_cost(&self, p: &Program, f: &Function, id: InstrId) -> u64 {
        self.instr_cost_depth(p, f, id, 0)
    }

    fn instr_cost_depth(&self, p: &Program, f: &Function, id: InstrId, depth: usize) -> u64 {
        if let Some(t) = f.terminator(id) {
            return match t.kind {
                TermKind::Jump(_) => self.c("jump"),
                TermKind::Branch { .. } => self.c("branch"),
                TermKind::Return(_) => self.c("ret"),
            };
        }
        let Some(i) = f.instr(id) else { return 0 };
        match &i.kind {
            InstrKind::Copy { .. } => self.c("copy"),
            InstrKind::Unary { .. } => self.c("unary"),
            InstrKind::Binary { .. } => self.c("binary"),
            InstrKind::Load { .. } => self.c("load"),
            InstrKind::Store { .. } => self.c("store"),
            InstrKind::Field { .. } => self.c("field"),
            InstrKind::Call { callee, .. } => {
                if let Some(intr) = Intrinsic::from_name(callee) {
                    return if intr.is_transcendental() { self.c("transcendental") } else { self.c("conversion") };
                }
                let overhead = self.c("call");
                match (self.call_cost, p.function(callee)) {
                    (CallCost::Fixed(c), _) => c,
                    (CallCost::InlineEstimate, Some(g)) if depth < INLINE_DEPTH => overhead + self.body_cost(p, g, depth + 1),
                    _ => overhead,
                }
            }
        }
    }

    /// Cost of one call of `f`: every block weighted by its loops' trip counts.
    pub fn function_cost(&self, p: &Program, f: &Function) -> u64 {
        self.body_cost(p, f, 0)
    }

    fn body_cost(&self, p: &Program, f: &Function, depth: usize) -> u64 {
        let loops = find_loops(f).unwrap_or_default();
        let mut total = 0u64;
        for b in &f.blocks {
            let mult = loops
                .iter()
                .filter(|l| l.contains(&b.label))
                .fold(1u64, |m, l| m.saturating_mul(self.trip(l)));
            let own: u64 = b
                .instrs
                .iter()
                .map(|i| i.id)
                .chain([b.term.id])
                .map(|id| self.instr_cost_depth(p, f, id, depth))
                .sum();
            total = total.saturating_add(own.saturating_mul(mult));
        }
        total
    }

    /// Per-iteration weight of each id in `l`: its cost times the trip
    /// counts of the loops nested inside `l` that contain it.
    pub fn iteration_weights(&self, p: &Program, f: &Function, l: &LoopInfo) -> BTreeMap<InstrId, u64> {
        let loops = find_loops(f).unwrap_or_default();
        let inner: Vec<&LoopInfo> = loops
            .iter()
            .filter(|x| x.header != l.header && x.body.iter().all(|b| l.contains(b)))
            .collect();
        let mut out = BTreeMap::new();
        for label in &l.body {
            let b = &f.blocks[f.block_index(label).unwrap()];
            let mult = inner.iter().filter(|x| x.contains(label)).fold(1u64, |m, x| m.saturating_mul(self.trip(x)));
            for id in b.instrs.iter().map(|i| i.id).chain([b.term.id]) {
                out.insert(id, self.instr_cost(p, f, id).saturating_mul(mult));
            }
        }
        out
    }
}

/// Estimated cycles for all iterations of `l`.
pub fn estimate_loop_cost(l: &LoopInfo, p: &Program, m: &LatencyModel) -> u64 {
    let Some(f) = p.function(&l.function) else { return 0 };
    let per_iter: u64 = m.iteration_weights(p, f, l).values().fold(0u64, |a, &b| a.saturating_add(b));
    per_iter.saturating_mul(m.trip(l))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopScore {
    pub header: String,
    pub depth: usize,
    pub contains_call: bool,
    pub cost: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub function: String,
    pub scores: Vec<LoopScore>,
    pub chosen: Option<String>,
}

/// Picks the costliest call-bearing loop of the entry function; ties go to
/// the outermost loop, then to textual order.
pub fn select_candidate_loop(p: &Program, m: &LatencyModel) -> Result<(LoopInfo, SelectionReport), CostError> {
    let f = p.function(&p.entry).ok_or_else(|| CostError::Loops(format!("entry '{}' not found", p.entry)))?;
    let loops = find_loops(f).map_err(|e| CostError::Loops(e.to_string()))?;
    let mut scores = Vec::new();
    let mut best: Option<(u64, usize, usize, usize)> = None; // cost, depth, block, index
    for (k, l) in loops.iter().enumerate() {
        let cost = estimate_loop_cost(l, p, m);
        scores.push(LoopScore { header: l.header.clone(), depth: l.depth, contains_call: l.contains_call, cost });
        if !l.contains_call {
            continue;
        }
        let key = (cost, l.depth, l.header_index(f), k);
        best = match best {
            None => Some(key),
            Some(b) => {
                let better = key.0 > b.0 || (key.0 == b.0 && (key.1 < b.1 || (key.1 == b.1 && key.2 < b.2)));
                Some(if better { key } else { b })
            }
        };
    }
    let mut report = SelectionReport { function: f.name.clone(), scores, chosen: None };
    match best {
        Some((_, _, _, k)) => {
            report.chosen = Some(loops[k].header.clone());
            Ok((loops[k].clone(), report))
        }
        None => Err(CostError::NoCandidate(f.name.clone())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;

    #[test]
    fn empty_body_costs_header_times_trip() {
        let p = parse_program(
            "func main() {\nb0:\n  i = 0\n  jump h\nh:\n  c = i < 10\n  br c body exit\nbody:\n  i = i + 1\n  jump h\nexit:\n  ret\n}\n",
        )
        .unwrap();
        let l = find_loops(&p.functions[0]).unwrap().remove(0);
        let m = LatencyModel::default();
        // header: compare + branch; body: add + jump
        assert_eq!(estimate_loop_cost(&l, &p, &m), 10 * 4);
    }
}
