//! Loop selection, stage assignment and pipeline planning.

mod cost;
mod plan;
mod profit;
mod stages;

pub use cost::{estimate_loop_cost, select_candidate_loop, CallCost, CostError, LatencyModel, LoopScore, SelectionReport, OPCODES};
pub use plan::{
    plan_dswp_slice, ChannelPlan, Direction, Field, PipelinePlan, PlanConfig, PlanError, PlanMode, Privatized, SliceMode,
    SlicedStage, WorkerKind, WorkerPlan,
};
pub use profit::{decide_profitability, decide_profitability_with, worker_latencies, Profitability, DEFAULT_COMM_COST, DEFAULT_THRESHOLD};
pub use stages::{assign_stages, assign_stages_with, Stage, StagePlan};
