use serde::{Deserialize, Serialize};

use super::cost::{CallCost, LatencyModel};
use super::plan::{PipelinePlan, WorkerKind};

pub const DEFAULT_THRESHOLD: f64 = 1.1;
pub const DEFAULT_COMM_COST: f64 = 60.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Profitability {
    pub apply: bool,
    pub predicted_speedup: f64,
    pub rationale: String,
}

/// Per-iteration cycle estimate of each worker under `m`.
pub fn worker_latencies(plan: &PipelinePlan, m: &LatencyModel) -> Vec<u64> {
    let p = &plan.program;
    let Some(f) = p.function(&plan.function) else { return vec![0; plan.workers.len()] };
    let weights = m.iteration_weights(p, f, &plan.loop_info);
    plan.workers
        .iter()
        .map(|w| match &w.kind {
            WorkerKind::Slice { function, .. } => {
                let body = p.function(function).map_or(0, |s| m.function_cost(p, s));
                match m.call_cost {
                    CallCost::Fixed(c) => c,
                    CallCost::InlineEstimate => m.costs.get("call").copied().unwrap_or(1) + body,
                }
            }
            _ => w.instrs.iter().map(|i| weights.get(i).copied().unwrap_or(0)).sum(),
        })
        .collect()
}

/// Profitability with the default threshold.
pub fn decide_profitability(plan: &PipelinePlan, m: &LatencyModel, comm_cost: f64) -> Profitability {
    decide_profitability_with(plan, m, comm_cost, DEFAULT_THRESHOLD)
}

/// Predicted speedup is the sequential estimate over the slowest worker,
/// where each worker also pays `comm_cost` per record on each of its channels.
pub fn decide_profitability_with(plan: &PipelinePlan, m: &LatencyModel, comm_cost: f64, threshold: f64) -> Profitability {
    let p = &plan.program;
    let seq = p
        .function(&plan.function)
        .map_or(0, |f| m.iteration_weights(p, f, &plan.loop_info).values().sum::<u64>()) as f64;
    let lat = worker_latencies(plan, m);
    let mut worst = 0.0f64;
    let mut worst_name = String::new();
    for (w, l) in plan.workers.iter().zip(&lat) {
        let traffic = plan.channels.iter().filter(|c| c.producer == w.id || c.consumer == w.id).count() as f64;
        let t = *l as f64 + traffic * comm_cost;
        if t > worst {
            worst = t;
            worst_name = w.name.clone();
        }
    }
    let speedup = if worst > 0.0 { seq / worst } else { 1.0 };
    let apply = plan.workers.len() > 1 && speedup > threshold;
    let rationale = format!(
        "sequential {seq:.0} cycles/iter; bottleneck {worst_name} at {worst:.0} (comm cost {comm_cost:.1}); predicted {speedup:.3}x {} threshold {threshold}",
        if apply { ">" } else { "<=" }
    );
    Profitability { apply, predicted_speedup: speedup, rationale }
}
