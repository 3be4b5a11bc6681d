use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::*;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum LoopError {
    #[error("irreducible region in '{function}': edge {from} -> {to}")]
    Irreducible { function: String, from: String, to: String },
}

/// A natural loop.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopInfo {
    pub function: String,
    pub header: String,
    /// Body labels in block order; includes the header.
    pub body: Vec<String>,
    pub latches: Vec<String>,
    pub induction: Option<String>,
    pub depth: usize,
    /// True if the body (including nested loops) calls a user function.
    pub contains_call: bool,
    pub static_trip_hint: Option<u64>,
}

impl LoopInfo {
    pub fn contains(&self, label: &str) -> bool {
        self.body.iter().any(|b| b == label)
    }

    pub fn block_indices(&self, f: &Function) -> Vec<usize> {
        self.body.iter().filter_map(|l| f.block_index(l)).collect()
    }

    pub fn header_index(&self, f: &Function) -> usize {
        f.block_index(&self.header).expect("loop header exists")
    }

    /// Ids of every instruction and terminator in the body.
    pub fn ids(&self, f: &Function) -> BTreeSet<InstrId> {
        let mut out = BTreeSet::new();
        for b in self.block_indices(f) {
            let blk = &f.blocks[b];
            out.extend(blk.instrs.iter().map(|i| i.id));
            out.insert(blk.term.id);
        }
        out
    }
}

/// Finds every natural loop of `f`, outermost first, then in header order.
pub fn find_loops(f: &Function) -> Result<Vec<LoopInfo>, LoopError> {
    if f.blocks.is_empty() {
        return Ok(Vec::new());
    }
    let cfg = Cfg::new(f);
    if let Some(&(a, b)) = cfg.irreducible_edges().first() {
        return Err(LoopError::Irreducible {
            function: f.name.clone(),
            from: f.blocks[a].label.clone(),
            to: f.blocks[b].label.clone(),
        });
    }
    let mut headers: Vec<usize> = Vec::new();
    let mut latches: Vec<Vec<usize>> = Vec::new();
    for (l, h) in cfg.back_edges() {
        match headers.iter().position(|&x| x == h) {
            Some(k) => latches[k].push(l),
            None => {
                headers.push(h);
                latches.push(vec![l]);
            }
        }
    }
    let mut bodies: Vec<BTreeSet<usize>> = Vec::new();
    for (k, &h) in headers.iter().enumerate() {
        let mut body = BTreeSet::from([h]);
        let mut stack: Vec<usize> = latches[k].clone();
        while let Some(b) = stack.pop() {
            if body.insert(b) {
                stack.extend(cfg.preds[b].iter().copied().filter(|p| cfg.reachable[*p]));
            }
        }
        bodies.push(body);
    }

    let mut loops = Vec::new();
    for (k, &h) in headers.iter().enumerate() {
        let depth = (0..headers.len())
            .filter(|&o| o != k && bodies[o].contains(&h) && bodies[o].is_superset(&bodies[k]))
            .count();
        let contains_call = bodies[k].iter().any(|&b| {
            f.blocks[b]
                .instrs
                .iter()
                .any(|i| i.callee().is_some_and(|c| Intrinsic::from_name(c).is_none()))
        });
        let (induction, trip) = induction_of(f, &cfg, h, &bodies[k]);
        let mut lat: Vec<usize> = latches[k].clone();
        lat.sort_unstable();
        loops.push(LoopInfo {
            function: f.name.clone(),
            header: f.blocks[h].label.clone(),
            body: bodies[k].iter().map(|&b| f.blocks[b].label.clone()).collect(),
            latches: lat.iter().map(|&b| f.blocks[b].label.clone()).collect(),
            induction,
            depth,
            contains_call,
            static_trip_hint: trip,
        });
    }
    loops.sort_by_key(|l| (l.depth, f.block_index(&l.header)));
    Ok(loops)
}

fn const_of(o: &Operand) -> Option<i64> {
    match o {
        Operand::Int(v) => Some(*v),
        _ => None,
    }
}

enum Step {
    Add(i64),
    Next,
    Other,
}

fn induction_of(f: &Function, cfg: &Cfg, header: usize, body: &BTreeSet<usize>) -> (Option<String>, Option<u64>) {
    let hb = &f.blocks[header];
    let TermKind::Branch { cond, then_label, .. } = &hb.term.kind else {
        return (None, None);
    };
    let Some(c) = cond.local() else {
        return (None, None);
    };
    let continue_on_true = f.block_index(then_label).is_some_and(|t| body.contains(&t));
    let cond_def = hb.instrs.iter().rev().find(|i| i.local_def() == Some(c));

    // Candidate variables, with the compare (if any) that tests them.
    let mut candidates: Vec<(String, Option<(BinOp, Operand, bool)>)> = Vec::new();
    match cond_def.map(|i| &i.kind) {
        Some(InstrKind::Binary { op, lhs, rhs, .. }) => {
            if let Some(v) = lhs.local() {
                candidates.push((v.to_string(), Some((*op, rhs.clone(), false))));
            }
            if let Some(v) = rhs.local() {
                candidates.push((v.to_string(), Some((*op, lhs.clone(), true))));
            }
        }
        Some(InstrKind::Copy { src: Operand::Local(v), .. }) => candidates.push((v.clone(), None)),
        Some(_) => {}
        None => candidates.push((c.to_string(), None)),
    }

    for (v, cmp) in candidates {
        let mut defs_in = Vec::new();
        let mut defs_out = Vec::new();
        for (bi, b) in f.blocks.iter().enumerate() {
            for i in &b.instrs {
                if i.local_def() == Some(v.as_str()) {
                    if body.contains(&bi) {
                        defs_in.push((bi, i));
                    } else {
                        defs_out.push((bi, i));
                    }
                }
            }
        }
        if defs_in.len() != 1 || defs_in[0].0 == header {
            continue;
        }
        let step = match &defs_in[0].1.kind {
            InstrKind::Binary { op: BinOp::Add, lhs, rhs, .. } if lhs.local() == Some(&v) => const_of(rhs).map_or(Step::Other, Step::Add),
            InstrKind::Binary { op: BinOp::Add, lhs, rhs, .. } if rhs.local() == Some(&v) => const_of(lhs).map_or(Step::Other, Step::Add),
            InstrKind::Binary { op: BinOp::Sub, lhs, rhs, .. } if lhs.local() == Some(&v) => {
                const_of(rhs).and_then(i64::checked_neg).map_or(Step::Other, Step::Add)
            }
            InstrKind::Field { node, field: NodeField::Next, .. } if node.local() == Some(&v) => Step::Next,
            _ => Step::Other,
        };
        let step = match step {
            Step::Other => {
                let is_real_step = matches!(&defs_in[0].1.kind,
                    InstrKind::Binary { op: BinOp::Add | BinOp::Sub, lhs, rhs, .. }
                        if (lhs.local() == Some(&v) && matches!(rhs, Operand::Real(_)))
                            || (rhs.local() == Some(&v) && matches!(lhs, Operand::Real(_))));
                if !is_real_step {
                    continue;
                }
                return (Some(v), None);
            }
            Step::Next => return (Some(v), None),
            Step::Add(s) => s,
        };
        // Trip hint: constant init reaching the header, constant bound.
        let init = match defs_out.as_slice() {
            [(bi, i)] if cfg.dominates(*bi, header) => match &i.kind {
                InstrKind::Copy { src: Operand::Int(x), .. } => Some(*x),
                _ => None,
            },
            _ => None,
        };
        let trip = match (init, cmp) {
            (Some(init), Some((op, bound, swapped))) => const_of(&bound).and_then(|b| trip_count(init, step, op, b, swapped, continue_on_true)),
            _ => None,
        };
        return (Some(v), trip);
    }
    (None, None)
}

/// Number of iterations of `for (v = init; v OP bound; v += step)`.
fn trip_count(init: i64, step: i64, op: BinOp, bound: i64, swapped: bool, continue_on_true: bool) -> Option<u64> {
    let op = if swapped {
        match op {
            BinOp::Lt => BinOp::Gt,
            BinOp::Le => BinOp::Ge,
            BinOp::Gt => BinOp::Lt,
            BinOp::Ge => BinOp::Le,
            o => o,
        }
    } else {
        op
    };
    let op = if continue_on_true {
        op
    } else {
        match op {
            BinOp::Lt => BinOp::Ge,
            BinOp::Le => BinOp::Gt,
            BinOp::Gt => BinOp::Le,
            BinOp::Ge => BinOp::Lt,
            BinOp::Eq => BinOp::Ne,
            BinOp::Ne => BinOp::Eq,
            _ => return None,
        }
    };
    let (init, step, bound) = (init as i128, step as i128, bound as i128);
    let n = match op {
        BinOp::Lt if init >= bound => 0,
        BinOp::Lt if step > 0 => (bound - init + step - 1) / step,
        BinOp::Le if init > bound => 0,
        BinOp::Le if step > 0 => (bound - init) / step + 1,
        BinOp::Gt if init <= bound => 0,
        BinOp::Gt if step < 0 => (init - bound + (-step) - 1) / (-step),
        BinOp::Ge if init < bound => 0,
        BinOp::Ge if step < 0 => (init - bound) / (-step) + 1,
        BinOp::Ne if step != 0 && (bound - init) % step == 0 && (bound - init) / step >= 0 => (bound - init) / step,
        _ => return None,
    };
    u64::try_from(n).ok()
}
