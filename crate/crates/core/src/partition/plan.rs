use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::cost::{select_candidate_loop, CostError, LatencyModel, SelectionReport};
use super::profit::decide_profitability_with;
use super::stages::{assign_stages_with, StagePlan};
use crate::ir::{
    access_names, find_loops, validate, Cfg, EffectSummary, Function, InstrId, InstrKind, LoopInfo, Operand, Place,
    Program,
};
use crate::pdg::{build_pdg_with, Pdg, Region};
use crate::scc::{build_dagscc, compute_sccs, DagScc};
use crate::slicer::{
    attach_control, build_control_table, collect_criteria, compute_slice, filter_redundant, materialize, merge_slices,
    rename_global, CriterionKind, Slice,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceMode {
    On,
    Off,
    /// Slice only when the sliced plan is predicted to beat plain DSWP.
    Auto,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    pub max_workers: usize,
    pub max_stages: usize,
    pub queue_capacity: usize,
    pub model: LatencyModel,
    pub slice: SliceMode,
    /// Cycles per enqueue+dequeue, used by `SliceMode::Auto`.
    pub comm_cost: f64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            max_workers: 4,
            max_stages: 2,
            queue_capacity: 1024,
            model: LatencyModel::default(),
            slice: SliceMode::On,
            comm_cost: super::profit::DEFAULT_COMM_COST,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("invalid program: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WorkerKind {
    /// Runs the loop's control and every instruction not given to another worker.
    Driver,
    Stage,
    Slice { function: String, call: InstrId, args: Vec<Operand>, dst: Option<String> },
    Merger,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkerPlan {
    pub id: usize,
    pub name: String,
    #[serde(flatten)]
    pub kind: WorkerKind,
    /// Loop ids this worker executes, in position order. For slices, the call.
    pub instrs: Vec<InstrId>,
    /// Loop-defined locals whose final value this worker holds.
    pub owns: Vec<String>,
    pub latency: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Return,
}

/// Value of `var` as seen by the consumer just before it executes `at`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Field {
    pub var: String,
    pub at: InstrId,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelPlan {
    pub name: String,
    pub producer: usize,
    pub consumer: usize,
    pub fields: Vec<Field>,
    pub element: String,
    pub capacity: usize,
    pub direction: Direction,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlicedStage {
    pub stage: usize,
    pub call: InstrId,
    pub callee: String,
    pub slices: Vec<String>,
    pub covers: Vec<Vec<String>>,
}

/// A global given one copy per slice that touches it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Privatized {
    pub global: String,
    pub copies: Vec<String>,
    /// The copy written back after the loop.
    pub owner: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanMode {
    Sequential,
    Dswp,
    DswpSlice,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelinePlan {
    /// The input program plus slice functions and private globals.
    pub program: Program,
    pub function: String,
    pub loop_info: LoopInfo,
    pub selection: SelectionReport,
    pub stage_plan: StagePlan,
    pub sliced_stage: Option<SlicedStage>,
    pub workers: Vec<WorkerPlan>,
    pub channels: Vec<ChannelPlan>,
    pub privatized: Vec<Privatized>,
    pub worker_count: usize,
    pub queue_capacity: usize,
    pub mode: PlanMode,
    /// Straight-line position of each top-level body instruction.
    pub positions: BTreeMap<InstrId, (usize, usize)>,
    /// Per-iteration cycles of the whole body.
    pub sequential_estimate: u64,
    pub model: LatencyModel,
    pub decision_log: Vec<String>,
}

impl PipelinePlan {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "function": self.function,
            "loop": self.loop_info,
            "selection": self.selection,
            "mode": self.mode,
            "stages": self.stage_plan,
            "sliced_stage": self.sliced_stage,
            "workers": self.workers,
            "channels": self.channels,
            "privatized": self.privatized,
            "worker_count": self.worker_count,
            "queue_capacity": self.queue_capacity,
            "sequential_estimate": self.sequential_estimate,
            "latency_model": self.model,
            "decision_log": self.decision_log,
        })
    }

    /// Human-readable summary.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "loop {} in {} ({:?}), {} worker(s)", self.loop_info.header, self.function, self.mode, self.worker_count);
        for w in &self.workers {
            let what = match &w.kind {
                WorkerKind::Slice { function, .. } => format!("runs {function}"),
                _ => format!("{} instr(s)", w.instrs.len()),
            };
            let _ = writeln!(s, "  worker {} {}: {}, ~{} cycles/iter", w.id, w.name, what, w.latency);
        }
        for c in &self.channels {
            let _ = writeln!(
                s,
                "  channel {} {} -> {} [{}] {:?}",
                c.name, self.workers[c.producer].name, self.workers[c.consumer].name, c.element, c.direction
            );
        }
        for p in &self.privatized {
            let _ = writeln!(s, "  private {} -> {} (owner {})", p.global, p.copies.join(", "), p.owner);
        }
        for l in &self.decision_log {
            let _ = writeln!(s, "  - {l}");
        }
        s
    }

    /// Ids run by some worker other than the driver.
    pub fn foreign(&self) -> BTreeSet<InstrId> {
        self.workers.iter().filter(|w| w.kind != WorkerKind::Driver).flat_map(|w| w.instrs.iter().copied()).collect()
    }
}

/// Loop analysis shared by every plan variant.
struct Analysis<'a> {
    p: &'a Program,
    f: &'a Function,
    l: LoopInfo,
    selection: SelectionReport,
    sums: BTreeMap<String, EffectSummary>,
    pdg: Pdg,
    dag: DagScc,
    weights: BTreeMap<InstrId, u64>,
    positions: BTreeMap<InstrId, (usize, usize)>,
    /// Locals defined anywhere in the loop body.
    loop_defs: BTreeSet<String>,
    shape: Result<(), String>,
}

/// A worker list before channel wiring.
#[derive(Clone)]
struct Draft {
    workers: Vec<(String, WorkerKind, Vec<InstrId>)>,
    functions: Vec<Function>,
    privatized: Vec<Privatized>,
    sliced: Option<SlicedStage>,
    log: Vec<String>,
}

/// Selects the candidate loop, partitions it into pipeline stages, and
/// optionally replaces the longest call-bearing stage by slices of the callee.
pub fn plan_dswp_slice(p: &Program, cfg: &PlanConfig) -> Result<PipelinePlan, PlanError> {
    let diags = validate(p);
    if let Some(d) = diags.first() {
        return Err(PlanError::Invalid(d.to_string()));
    }
    cfg.model.check()?;
    if cfg.max_workers < 1 || cfg.queue_capacity < 2 {
        return Err(PlanError::Invalid("max_workers must be >= 1 and queue_capacity >= 2".into()));
    }
    let a = analyze(p, &cfg.model)?;
    let mut log = vec![format!(
        "selected loop '{}' of '{}': estimated {} cycles among {} loop(s)",
        a.l.header,
        a.f.name,
        a.selection.scores.iter().find(|s| Some(&s.header) == a.selection.chosen.as_ref()).map_or(0, |s| s.cost),
        a.selection.scores.len()
    )];
    log.push(format!("latency model: {:?}, default trip {}", cfg.model.costs, cfg.model.default_trip));

    let forced = forced_components(&a);
    let max_stages = cfg.max_stages.max(2).min(cfg.max_workers.max(1));
    let mut stage_plan = assign_stages_with(&a.dag, max_stages, &forced);
    stage_plan.annotate(&a.dag, &a.pdg);
    log.push(format!(
        "{} SCC(s), {} pinned to stage 0 (loop control, nested code, recurrences); {} stage(s)",
        a.dag.components.len(),
        forced.len(),
        stage_plan.stages.len()
    ));

    if let Err(why) = &a.shape {
        log.push(format!("loop shape not pipelinable ({why}); running sequentially"));
        return assemble(&a, cfg, stage_plan, sequential_draft(&a, log));
    }
    if stage_plan.degenerate || cfg.max_workers < 2 {
        log.push("DSWP degenerate: fewer than 2 stages; running sequentially".into());
        return assemble(&a, cfg, stage_plan, sequential_draft(&a, log));
    }
    for s in &stage_plan.stages {
        log.push(format!("stage {}: {} SCC(s), ~{} cycles/iter", s.id, s.components.len(), s.latency));
    }

    let dswp = dswp_draft(&a, &stage_plan, log.clone());
    if cfg.slice == SliceMode::Off {
        let mut d = dswp;
        d.log.push("slicing disabled; plain DSWP".into());
        return assemble(&a, cfg, stage_plan, d);
    }
    match slice_draft(&a, &stage_plan, cfg, log) {
        Ok(sliced) => {
            let plan = assemble(&a, cfg, stage_plan.clone(), sliced);
            match plan {
                Ok(plan) if cfg.slice == SliceMode::Auto => {
                    let base = assemble(&a, cfg, stage_plan, dswp)?;
                    let ps = decide_profitability_with(&plan, &cfg.model, cfg.comm_cost, 0.0).predicted_speedup;
                    let pd = decide_profitability_with(&base, &cfg.model, cfg.comm_cost, 0.0).predicted_speedup;
                    if ps > pd {
                        let mut plan = plan;
                        plan.decision_log.push(format!("auto: sliced plan predicted {ps:.2}x vs DSWP {pd:.2}x; slicing"));
                        Ok(plan)
                    } else {
                        let mut base = base;
                        base.decision_log.push(format!("auto: sliced plan predicted {ps:.2}x vs DSWP {pd:.2}x; not slicing"));
                        Ok(base)
                    }
                }
                Ok(plan) => Ok(plan),
                Err(e) => {
                    let mut d = dswp;
                    d.log.push(format!("sliced plan rejected ({e}); falling back to plain DSWP"));
                    assemble(&a, cfg, stage_plan, d)
                }
            }
        }
        Err(why) => {
            let mut d = dswp;
            d.log.push(format!("slicing not applied: {why}; falling back to plain DSWP"));
            assemble(&a, cfg, stage_plan, d)
        }
    }
}

fn analyze<'a>(p: &'a Program, model: &LatencyModel) -> Result<Analysis<'a>, PlanError> {
    let (l, selection) = select_candidate_loop(p, model)?;
    let f = p.function(&p.entry).expect("validated");
    let cfg = Cfg::new(f);
    let loops = find_loops(f).map_err(|e| PlanError::Invalid(e.to_string()))?;
    let sums = EffectSummary::compute(p);
    let pdg = build_pdg_with(&sums, f, &Region::Loop(l.clone())).map_err(|e| PlanError::Invalid(e.to_string()))?;
    let weights = model.iteration_weights(p, f, &l);
    let dag = build_dagscc(&pdg, compute_sccs(&pdg), &|id| weights.get(&id).copied().unwrap_or(0));

    let body: BTreeSet<usize> = l.block_indices(f).into_iter().collect();
    let h = l.header_index(f);
    let latches: Vec<usize> = l.latches.iter().filter_map(|x| f.block_index(x)).collect();
    let inner: Vec<&LoopInfo> = loops.iter().filter(|x| x.header != l.header && x.body.iter().all(|b| l.contains(b))).collect();
    let mut top: Vec<usize> = body
        .iter()
        .copied()
        .filter(|&b| {
            b != h
                && !inner.iter().any(|x| x.contains(&f.blocks[b].label))
                && latches.iter().all(|&t| cfg.dominates(b, t))
        })
        .collect();
    top.sort_by_key(|&b| (0..f.blocks.len()).filter(|&d| cfg.dominates(d, b)).count());
    let mut positions = BTreeMap::new();
    for (rank, &b) in top.iter().enumerate() {
        for (k, i) in f.blocks[b].instrs.iter().enumerate() {
            positions.insert(i.id, (rank, k));
        }
    }

    let mut shape = Ok(());
    for &b in &body {
        for &s in &cfg.succs[b] {
            if !body.contains(&s) && b != h {
                shape = Err(format!("block '{}' exits the loop; only the header may", f.blocks[b].label));
            }
        }
    }
    if !f.blocks[h].term.is_branch() {
        shape = Err("header does not end in a branch".into());
    }
    let mut loop_defs = BTreeSet::new();
    for &b in &body {
        loop_defs.extend(f.blocks[b].instrs.iter().filter_map(|i| i.local_def()).map(str::to_string));
    }
    Ok(Analysis { p, f, l, selection, sums, pdg, dag, weights, positions, loop_defs, shape })
}

/// Components that must run in the driver: everything that is not a
/// top-level body instruction (loop control, branches, nested code).
fn forced_components(a: &Analysis) -> BTreeSet<usize> {
    a.pdg
        .nodes
        .iter()
        .filter(|n| !a.positions.contains_key(n))
        .map(|n| a.dag.component_of[n])
        .collect()
}

fn stage_instrs(a: &Analysis, sp: &StagePlan, s: usize) -> Vec<InstrId> {
    let mut v: Vec<InstrId> =
        sp.stages[s].components.iter().flat_map(|&c| a.dag.components[c].members.iter().copied()).collect();
    sort_by_position(a, &mut v);
    v
}

fn sort_by_position(a: &Analysis, v: &mut [InstrId]) {
    v.sort_by_key(|i| a.positions.get(i).copied().unwrap_or((usize::MAX, i.index())));
}

fn driver_instrs(a: &Analysis, foreign: &BTreeSet<InstrId>) -> Vec<InstrId> {
    a.l.ids(a.f).into_iter().filter(|i| !foreign.contains(i)).collect()
}

fn sequential_draft(a: &Analysis, log: Vec<String>) -> Draft {
    Draft {
        workers: vec![("L".into(), WorkerKind::Driver, driver_instrs(a, &BTreeSet::new()))],
        functions: vec![],
        privatized: vec![],
        sliced: None,
        log,
    }
}

fn dswp_draft(a: &Analysis, sp: &StagePlan, log: Vec<String>) -> Draft {
    let mut workers = vec![("L".to_string(), WorkerKind::Driver, Vec::new())];
    for s in 1..sp.stages.len() {
        workers.push((format!("X{s}"), WorkerKind::Stage, stage_instrs(a, sp, s)));
    }
    let foreign: BTreeSet<InstrId> = workers.iter().flat_map(|w| w.2.iter().copied()).collect();
    workers[0].2 = driver_instrs(a, &foreign);
    Draft { workers, functions: vec![], privatized: vec![], sliced: None, log }
}

fn slice_draft(a: &Analysis, sp: &StagePlan, cfg: &PlanConfig, mut log: Vec<String>) -> Result<Draft, String> {
    let p = a.p;
    let is_user_call = |id: &InstrId| a.pdg.calls.contains(id);
    // longest later stage holding a user call
    let k = (1..sp.stages.len())
        .filter(|&s| stage_instrs(a, sp, s).iter().any(is_user_call))
        .max_by_key(|&s| (sp.stages[s].latency, std::cmp::Reverse(s)))
        .ok_or("no later stage contains a call")?;
    let longest = (0..sp.stages.len()).max_by_key(|&s| (sp.stages[s].latency, std::cmp::Reverse(s))).unwrap();
    log.push(format!(
        "stage {k} holds a call and is the {} stage; trying to slice it",
        if longest == k { "longest" } else { "longest call-bearing" }
    ));
    let members = stage_instrs(a, sp, k);
    let call = *members
        .iter()
        .filter(|i| is_user_call(i))
        .max_by_key(|i| (a.weights.get(i).copied().unwrap_or(0), std::cmp::Reverse(**i)))
        .unwrap();
    let ci = a.f.instr(call).unwrap();
    let InstrKind::Call { dst, callee, args } = &ci.kind else { unreachable!() };
    if a.dag.components[a.dag.component_of[&call]].members.len() != 1 {
        return Err(format!("call {call} to '{callee}' is part of a dependence cycle"));
    }
    let dst = match dst {
        None => None,
        Some(Place::Local(n)) => Some(n.clone()),
        Some(Place::Global(g)) => return Err(format!("call result is assigned to global '{g}'")),
    };
    let g = p.function(callee).unwrap();

    // slices of the callee
    let mut criteria = collect_criteria(p, g).map_err(|e| e.to_string())?;
    if dst.is_none() {
        criteria.retain(|c| c.kind != CriterionKind::Return);
    }
    let gpdg = build_pdg_with(&a.sums, g, &Region::Function).map_err(|e| e.to_string())?;
    let table = build_control_table(g);
    let mut slices: Vec<Slice> =
        filter_redundant(criteria.iter().map(|c| attach_control(g, &compute_slice(g, &gpdg, c), &table)).collect());
    log.push(format!(
        "slicer on '{callee}': {} criteria, {} slice(s) kept: {}",
        criteria.len(),
        slices.len(),
        slices.iter().map(|s| format!("{{{}}}", s.covers.join(","))).collect::<Vec<_>>().join(" ")
    ));
    if slices.len() < 2 {
        return Err(format!("slicer yields {} slice(s)", slices.len()));
    }
    for s in &slices {
        for id in s.all() {
            if let Some(c) = g.instr(id).and_then(|i| i.callee()) {
                if p.function(c).is_some_and(|h| !h.pure) {
                    return Err(format!("slice of '{}' calls non-pure '{c}'", s.criterion.name));
                }
            }
        }
    }

    // split the rest of the stage around the call
    let succ = {
        let mut m: BTreeMap<InstrId, Vec<InstrId>> = BTreeMap::new();
        for (s, d) in a.pdg.data.iter().map(|e| (e.src, e.dst)).chain(a.pdg.control.iter().map(|e| (e.src, e.dst))) {
            m.entry(s).or_default().push(d);
        }
        m
    };
    let mut desc = BTreeSet::new();
    let mut stack = vec![call];
    while let Some(x) = stack.pop() {
        for &y in succ.get(&x).into_iter().flatten() {
            if desc.insert(y) {
                stack.push(y);
            }
        }
    }
    let rest: Vec<InstrId> = members.iter().copied().filter(|&i| i != call).collect();
    let pre: Vec<InstrId> = rest.iter().copied().filter(|i| !desc.contains(i)).collect();
    let post: Vec<InstrId> = rest.iter().copied().filter(|i| desc.contains(i)).collect();

    let fixed = sp.stages.len() - 1 + usize::from(!post.is_empty());
    let room = cfg.max_workers.saturating_sub(fixed);
    if room < 2 {
        return Err(format!("only {room} worker(s) left for slices under max_workers {}", cfg.max_workers));
    }
    while slices.len() > room {
        let mut order: Vec<usize> = (0..slices.len()).collect();
        order.sort_by_key(|&i| (slices[i].all().len(), std::cmp::Reverse(i)));
        let (x, y) = (order[0].min(order[1]), order[0].max(order[1]));
        let merged = merge_slices(g, &slices[x], &slices[y]);
        log.push(format!("merged slices {{{}}} and {{{}}} to fit {room} worker(s)", slices[x].covers.join(","), slices[y].covers.join(",")));
        slices[x] = merged;
        slices.remove(y);
    }

    // storage touched by each slice, named in the caller's terms
    let mut arg_global: BTreeMap<String, String> = BTreeMap::new();
    for (prm, arg) in g.params.iter().zip(args) {
        if prm.kind == crate::ir::ParamKind::RealArray {
            match arg {
                Operand::ArrayRef(gl) => {
                    if arg_global.values().any(|v| v == gl) {
                        return Err(format!("array '{gl}' passed twice to '{callee}'"));
                    }
                    arg_global.insert(prm.name.clone(), gl.clone());
                }
                _ => return Err(format!("array argument for '{}' is not a global array", prm.name)),
            }
        }
    }
    let global_of = |n: &str| arg_global.get(n).cloned().unwrap_or_else(|| n.to_string());
    let mut writers: BTreeMap<String, BTreeSet<InstrId>> = BTreeMap::new();
    let mut touch: Vec<BTreeSet<String>> = vec![BTreeSet::new(); slices.len()];
    for i in g.instrs() {
        let (r, w) = access_names(&a.sums, g, i);
        for n in &w {
            writers.entry(global_of(n)).or_default().insert(i.id);
        }
        for (k, s) in slices.iter().enumerate() {
            if s.all().contains(&i.id) {
                touch[k].extend(r.iter().chain(&w).map(|n| global_of(n)));
            }
        }
    }
    let mut private: BTreeMap<(usize, String), String> = BTreeMap::new();
    let mut privatized = Vec::new();
    for (gl, ws) in &writers {
        let covered: Vec<usize> = (0..slices.len()).filter(|&k| ws.is_subset(&slices[k].all())).collect();
        let touching: Vec<usize> = (0..slices.len()).filter(|&k| touch[k].contains(gl)).collect();
        if covered.is_empty() {
            return Err(format!("write to '{gl}' is not covered by any slice"));
        }
        if let Some(&k) = touching.iter().find(|k| !covered.contains(k)) {
            return Err(format!("slice {{{}}} reads '{gl}' without writing it", slices[k].covers.join(",")));
        }
        if touching.len() > 1 {
            let mut copies = Vec::new();
            for &k in &touching {
                let name = format!("{gl}__s{}", k + 1);
                if p.global(&name).is_some() || p.function(&name).is_some() {
                    return Err(format!("name '{name}' already taken"));
                }
                private.insert((k, gl.clone()), name.clone());
                copies.push(name);
            }
            let owner = private[&(covered[0], gl.clone())].clone();
            log.push(format!("'{gl}' is written by {} slices; each gets a private copy, '{owner}' is kept", touching.len()));
            privatized.push(Privatized { global: gl.clone(), copies, owner });
        }
    }

    // materialize
    let mut functions = Vec::new();
    let mut slice_workers = Vec::new();
    let mut names = Vec::new();
    for (k, s) in slices.iter().enumerate() {
        let name = format!("{callee}__s{}", k + 1);
        if p.function(&name).is_some() || p.global(&name).is_some() {
            return Err(format!("name '{name}' already taken"));
        }
        let mut fun = materialize(g, s, &name).map_err(|e| e.to_string())?;
        for ((kk, gl), copy) in &private {
            if *kk == k {
                rename_global(&mut fun, gl, copy);
            }
        }
        let sargs: Vec<Operand> = fun
            .params
            .iter()
            .map(|prm| {
                let arg = args[g.param_index(&prm.name).unwrap()].clone();
                match &arg {
                    Operand::ArrayRef(gl) => private.get(&(k, gl.clone())).map_or(arg.clone(), |c| Operand::ArrayRef(c.clone())),
                    _ => arg,
                }
            })
            .collect();
        let returns = s.covers.iter().any(|c| c == "return");
        let kind = WorkerKind::Slice { function: name.clone(), call, args: sargs, dst: if returns { dst.clone() } else { None } };
        slice_workers.push((format!("S{}", k + 1), kind, vec![call]));
        names.push(name);
        functions.push(fun);
    }

    let mut workers: Vec<(String, WorkerKind, Vec<InstrId>)> = vec![("L".into(), WorkerKind::Driver, Vec::new())];
    for s in 1..k {
        workers.push((format!("X{s}"), WorkerKind::Stage, stage_instrs(a, sp, s)));
    }
    if !pre.is_empty() {
        log.push(format!("{} instruction(s) independent of the call move to the previous stage", pre.len()));
        if k > 1 {
            let w = workers.last_mut().unwrap();
            w.2.extend(pre.iter().copied());
            sort_by_position(a, &mut w.2);
        }
    }
    workers.extend(slice_workers);
    if !post.is_empty() {
        log.push(format!("{} instruction(s) consuming the call's result run in merger Y", post.len()));
        workers.push(("Y".into(), WorkerKind::Merger, post));
    }
    for s in k + 1..sp.stages.len() {
        workers.push((format!("X{s}"), WorkerKind::Stage, stage_instrs(a, sp, s)));
    }
    let foreign: BTreeSet<InstrId> = workers.iter().flat_map(|w| w.2.iter().copied()).collect();
    workers[0].2 = driver_instrs(a, &foreign);
    let covers = slices.iter().map(|s| s.covers.clone()).collect();
    Ok(Draft { workers, functions, privatized, sliced: Some(SlicedStage { stage: k, call, callee: callee.clone(), slices: names, covers }), log })
}

/// Assigns variable ownership, wires channels and estimates worker latency.
fn assemble(a: &Analysis, cfg: &PlanConfig, stage_plan: StagePlan, d: Draft) -> Result<PipelinePlan, PlanError> {
    let bad = |m: String| PlanError::Invalid(m);
    let mut program = a.p.clone();
    program.functions.extend(d.functions.iter().cloned());
    for pv in &d.privatized {
        let decl = a.p.global(&pv.global).unwrap().clone();
        for c in &pv.copies {
            program.globals.push(crate::ir::GlobalDecl { name: c.clone(), ..decl.clone() });
        }
    }

    let n = d.workers.len();
    let mut owner: BTreeMap<String, usize> = BTreeMap::new();
    let mut owns: Vec<Vec<String>> = vec![Vec::new(); n];
    for (w, (_, kind, instrs)) in d.workers.iter().enumerate().skip(1) {
        let mut defs: Vec<String> = Vec::new();
        match kind {
            WorkerKind::Slice { dst, .. } => defs.extend(dst.iter().cloned()),
            _ => defs.extend(instrs.iter().filter_map(|&i| a.f.instr(i)?.local_def()).map(str::to_string)),
        }
        for v in defs {
            if let Some(o) = owner.insert(v.clone(), w) {
                if o != w {
                    return Err(bad(format!("'{v}' is defined by workers {o} and {w}")));
                }
            } else {
                owns[w].push(v);
            }
        }
    }
    for i in &d.workers[0].2 {
        if let Some(v) = a.f.instr(*i).and_then(|i| i.local_def()) {
            if let Some(&o) = owner.get(v) {
                return Err(bad(format!("'{v}' is defined by the driver and worker {o}")));
            }
        }
    }
    for v in &a.loop_defs {
        if !owner.contains_key(v) {
            owner.insert(v.clone(), 0);
            owns[0].push(v.clone());
        }
    }

    // uses per worker: (position, var)
    let mut fields: BTreeMap<(usize, usize), BTreeSet<Field>> = BTreeMap::new();
    for (w, (_, kind, instrs)) in d.workers.iter().enumerate() {
        let mut uses: Vec<(InstrId, String)> = Vec::new();
        match kind {
            WorkerKind::Slice { args, call, .. } => {
                uses.extend(args.iter().filter_map(|o| o.local()).map(|v| (*call, v.to_string())));
            }
            _ => {
                for &i in instrs {
                    if let Some(ins) = a.f.instr(i) {
                        uses.extend(ins.local_uses().into_iter().map(|v| (i, v.to_string())));
                    } else if let Some(t) = a.f.terminator(i) {
                        uses.extend(t.local_uses().into_iter().map(|v| (i, v.to_string())));
                    }
                }
            }
        }
        for (at, v) in uses {
            let Some(&o) = owner.get(&v) else { continue };
            if o == w {
                continue;
            }
            if o > w {
                return Err(bad(format!("worker {w} uses '{v}' from later worker {o}")));
            }
            fields.entry((o, w)).or_default().insert(Field { var: v, at });
        }
    }
    for w in 1..n {
        if !fields.keys().any(|&(_, c)| c == w) {
            fields.insert((0, w), BTreeSet::new());
        }
    }
    let pos = |i: InstrId| a.positions.get(&i).copied().unwrap_or((usize::MAX, i.index()));
    let mut channels = Vec::new();
    for ((o, c), fs) in fields {
        let mut fs: Vec<Field> = fs.into_iter().collect();
        fs.sort_by(|x, y| (pos(x.at), &x.var).cmp(&(pos(y.at), &y.var)));
        let returning = matches!(&d.workers[o].1, WorkerKind::Slice { dst: Some(r), .. } if fs.iter().any(|f| &f.var == r));
        let element = if fs.is_empty() {
            "token".to_string()
        } else {
            fs.iter().map(|f| format!("{}@{}", f.var, f.at)).collect::<Vec<_>>().join(",")
        };
        channels.push(ChannelPlan {
            name: format!("{}->{}", d.workers[o].0, d.workers[c].0),
            producer: o,
            consumer: c,
            fields: fs,
            element,
            capacity: cfg.queue_capacity,
            direction: if returning { Direction::Return } else { Direction::Forward },
        });
    }

    let mut workers = Vec::new();
    for (id, ((name, kind, instrs), own)) in d.workers.into_iter().zip(owns).enumerate() {
        workers.push(WorkerPlan { id, name, kind, instrs, owns: own, latency: 0 });
    }
    let mut log = d.log;
    let mode = match (workers.len(), d.sliced.is_some()) {
        (1, _) => PlanMode::Sequential,
        (_, false) => PlanMode::Dswp,
        (_, true) => PlanMode::DswpSlice,
    };
    log.push(format!("{} worker(s), {} channel(s)", workers.len(), channels.len()));
    let mut plan = PipelinePlan {
        program,
        function: a.f.name.clone(),
        loop_info: a.l.clone(),
        selection: a.selection.clone(),
        stage_plan,
        sliced_stage: d.sliced,
        worker_count: workers.len(),
        workers,
        channels,
        privatized: d.privatized,
        queue_capacity: cfg.queue_capacity,
        mode,
        positions: a.positions.clone(),
        sequential_estimate: a.weights.values().sum(),
        model: cfg.model.clone(),
        decision_log: log,
    };
    let lat = super::profit::worker_latencies(&plan, &cfg.model);
    for (w, l) in plan.workers.iter_mut().zip(lat) {
        w.latency = l;
    }
    Ok(plan)
}
