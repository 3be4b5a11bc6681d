//! Executes pipeline plans on threads, plus the sequential baseline.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicBool, Ordering};
use std::thread::{Scope, ScopedJoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

use crate::ir::{
    collect_outputs, Code, Hook, Input, InterpError, InterpOptions, Machine, Memory, Operand, Output, Program, Value,
};
use crate::partition::{
    plan_dswp_slice, select_candidate_loop, LatencyModel, PipelinePlan, PlanConfig, PlanError, SliceMode, WorkerKind,
};
use crate::queue::{self, BlockError, Consumer, Control, Dequeued, Producer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Sequential,
    Dswp,
    DswpSlice,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Sequential, Mode::Dswp, Mode::DswpSlice];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Sequential => "sequential",
            Mode::Dswp => "dswp",
            Mode::DswpSlice => "dswp-slice",
        }
    }

    pub fn from_name(s: &str) -> Option<Mode> {
        Mode::ALL.into_iter().find(|m| m.name() == s)
    }

    /// Fewest workers the mode can use.
    pub fn min_workers(self) -> usize {
        match self {
            Mode::Sequential => 1,
            Mode::Dswp => 2,
            Mode::DswpSlice => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub workers: usize,
    pub queue_capacity: usize,
    pub repetitions: usize,
    pub seed: u64,
    /// A blocked worker gives up after this long without progress.
    pub watchdog: Duration,
    pub model: LatencyModel,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::DswpSlice,
            workers: 4,
            queue_capacity: queue::DEFAULT_CAPACITY,
            repetitions: 1,
            seed: 0,
            watchdog: Duration::from_secs(10),
            model: LatencyModel::default(),
        }
    }
}

impl RunConfig {
    pub fn check(&self) -> Result<(), RunError> {
        if self.repetitions < 1 {
            return Err(RunError::Config("repetitions must be >= 1".into()));
        }
        if self.workers < self.mode.min_workers() {
            return Err(RunError::Config(format!(
                "mode {} needs at least {} workers, got {}",
                self.mode.name(),
                self.mode.min_workers(),
                self.workers
            )));
        }
        if self.queue_capacity < 2 {
            return Err(RunError::Config("queue capacity must be >= 2".into()));
        }
        Ok(())
    }

    pub fn plan_config(&self) -> PlanConfig {
        PlanConfig {
            max_workers: self.workers,
            queue_capacity: self.queue_capacity,
            model: self.model.clone(),
            slice: if self.mode == Mode::DswpSlice { SliceMode::On } else { SliceMode::Off },
            ..PlanConfig::default()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub name: String,
    pub enqueues: u64,
    pub dequeues: u64,
    pub full_stalls: u64,
    pub empty_stalls: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: Mode,
    pub outputs: BTreeMap<String, Output>,
    pub wall_times: Vec<f64>,
    pub median_time: f64,
    /// Loop iterations of the last repetition.
    pub items_processed: u64,
    /// Iterations seen by each worker in the last repetition.
    pub worker_items: Vec<(String, u64)>,
    /// Summed over repetitions.
    pub channel_stats: Vec<ChannelStats>,
    pub worker_count: usize,
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Interp(#[from] InterpError),
    #[error("worker {worker} failed: {message}")]
    Worker { worker: String, message: String },
    #[error("worker {0} panicked")]
    Panic(String),
    #[error("no progress for {timeout:?}; channel stats: {stats}")]
    Deadlock { timeout: Duration, stats: String },
    #[error("outputs differ across repetitions")]
    Nondeterministic,
}

/// Median of `xs` (mean of the middle two for even lengths).
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

// ---------------------------------------------------------------------------
// Sequential baseline

/// Times the candidate loop and counts its iterations.
struct LoopTimer {
    header: u32,
    body: Vec<bool>,
    start: Option<Instant>,
    total: Duration,
    iterations: u64,
}

impl Hook for LoopTimer {
    const ACTIVE: bool = true;
    fn foreign(&self, _: u32) -> bool {
        false
    }
    fn on_skip(&mut self, _: u32, _: &[Value]) -> Result<(), InterpError> {
        Ok(())
    }
    fn on_edge(&mut self, from: u32, to: u32, _: &mut [Value]) -> Result<(), InterpError> {
        let (fb, tb) = (self.body[from as usize], self.body[to as usize]);
        if to == self.header && !fb {
            self.start = Some(Instant::now());
        } else if to == self.header {
            self.iterations += 1;
        } else if from == self.header && !tb {
            if let Some(t) = self.start.take() {
                self.total += t.elapsed();
            }
        }
        Ok(())
    }
}

/// Runs `p` on the interpreter, timing the candidate loop only (the whole
/// entry function when there is no candidate).
pub fn execute_sequential(p: &Program, input: &Input, cfg: &RunConfig) -> Result<RunReport, RunError> {
    if cfg.repetitions < 1 {
        return Err(RunError::Config("repetitions must be >= 1".into()));
    }
    let code = Code::compile(p)?;
    let entry = code.entry;
    let f = p.function(&p.entry).unwrap();
    let region = select_candidate_loop(p, &cfg.model).ok().map(|(l, _)| l);
    let mut times = Vec::new();
    let mut outputs: Option<BTreeMap<String, Output>> = None;
    let mut items = 0;
    for _ in 0..cfg.repetitions {
        let mem = Memory::new(&p.globals, &input.init)?;
        let mut m = Machine::new(&code, &mem, &input.heap, &InterpOptions::default());
        let mut frame = m.frame(entry, &input.args)?;
        let (ret, t) = match &region {
            Some(l) => {
                let mut body = vec![false; f.blocks.len()];
                for b in l.block_indices(f) {
                    body[b] = true;
                }
                let mut hook =
                    LoopTimer { header: l.header_index(f) as u32, body, start: None, total: Duration::ZERO, iterations: 0 };
                let ret = m.run(entry, &mut frame, &mut hook)?;
                items = hook.iterations;
                (ret, hook.total)
            }
            None => {
                let t0 = Instant::now();
                let ret = m.run(entry, &mut frame, &mut crate::ir::NoHook)?;
                (ret, t0.elapsed())
            }
        };
        let out = collect_outputs(p, &mem, ret);
        match &outputs {
            Some(o) if o != &out => return Err(RunError::Nondeterministic),
            Some(_) => {}
            None => outputs = Some(out),
        }
        times.push(t.as_secs_f64());
    }
    Ok(RunReport {
        mode: Mode::Sequential,
        outputs: outputs.unwrap(),
        median_time: median(&times),
        wall_times: times,
        items_processed: items,
        worker_items: vec![("L".into(), items)],
        channel_stats: vec![],
        worker_count: 1,
    })
}

// ---------------------------------------------------------------------------
// Pipelined execution

type Record = SmallVec<[Value; 4]>;

#[derive(Clone, Debug)]
enum ArgSrc {
    Slot(u32),
    Glob(u32),
    Val(Value),
}

#[derive(Clone, Debug)]
enum Action {
    /// Copy field `field` of the record from input `input` into `slot`.
    Restore { input: usize, field: usize, slot: u32 },
    Exec(u32),
    Call { func: u32, args: Vec<ArgSrc>, dst: Option<u32> },
    /// Append `slot` to the pending record of output `output`.
    Capture { output: usize, slot: u32 },
}

struct WorkerRt {
    name: String,
    inputs: Vec<usize>,
    outputs: Vec<usize>,
    script: Vec<Action>,
    owns: Vec<u32>,
}

/// Everything derived from a plan that the threads share read-only.
struct Prepared<'p> {
    plan: &'p PipelinePlan,
    code: Code,
    entry: u32,
    header: u32,
    body: Vec<bool>,
    foreign: Vec<bool>,
    /// Per instruction id: driver captures as (output, slot).
    captures: Vec<Vec<(usize, u32)>>,
    driver_outputs: Vec<usize>,
    workers: Vec<WorkerRt>,
    privatize: Vec<(usize, usize)>,
    writeback: Vec<(usize, usize)>,
    hidden: BTreeSet<String>,
}

fn prepare(plan: &PipelinePlan) -> Result<Prepared<'_>, RunError> {
    let bad = |m: String| RunError::Config(m);
    let p = &plan.program;
    let code = Code::compile(p)?;
    let entry = code.entry;
    if plan.function != p.entry {
        return Err(bad(format!("plan loop is in '{}', not the entry function", plan.function)));
    }
    let f = p.function(&plan.function).unwrap();
    let cf = &code.funcs[entry as usize];
    let slot = |v: &str| cf.slot(v).map(|s| s as u32).ok_or_else(|| bad(format!("unknown local '{v}'")));
    let gidx = |g: &str| code.gindex.get(g).copied().ok_or_else(|| bad(format!("unknown global '{g}'")));

    let mut body = vec![false; f.blocks.len()];
    for b in plan.loop_info.block_indices(f) {
        body[b] = true;
    }
    let header = plan.loop_info.header_index(f) as u32;
    let nids = f.id_count();
    let mut foreign = vec![false; nids];
    for i in plan.foreign() {
        foreign[i.index()] = true;
    }
    let pos = |i: crate::ir::InstrId| plan.positions.get(&i).copied().unwrap_or((usize::MAX, i.index()));

    let mut captures = vec![Vec::new(); nids];
    let mut driver_outputs = Vec::new();
    let mut workers: Vec<WorkerRt> = plan
        .workers
        .iter()
        .map(|w| WorkerRt { name: w.name.clone(), inputs: vec![], outputs: vec![], script: vec![], owns: vec![] })
        .collect();
    // (position, order, action) per worker
    let mut staged: Vec<Vec<((usize, usize), u8, Action)>> = vec![Vec::new(); plan.workers.len()];
    for (ci, ch) in plan.channels.iter().enumerate() {
        let out_k = workers[ch.producer].outputs.len();
        workers[ch.producer].outputs.push(ci);
        let in_k = workers[ch.consumer].inputs.len();
        workers[ch.consumer].inputs.push(ci);
        for (fi, fl) in ch.fields.iter().enumerate() {
            let s = slot(&fl.var)?;
            if ch.producer == 0 {
                if !foreign[fl.at.index()] {
                    return Err(bad(format!("capture point {} is not foreign to the driver", fl.at)));
                }
                captures[fl.at.index()].push((out_k, s));
            } else {
                staged[ch.producer].push((pos(fl.at), 0, Action::Capture { output: out_k, slot: s }));
            }
            staged[ch.consumer].push((pos(fl.at), 0, Action::Restore { input: in_k, field: fi, slot: s }));
        }
        if ch.producer == 0 {
            driver_outputs.push(ci);
        }
    }
    for (w, wp) in plan.workers.iter().enumerate() {
        match &wp.kind {
            WorkerKind::Driver => {}
            WorkerKind::Stage | WorkerKind::Merger => {
                for &i in &wp.instrs {
                    if f.instr(i).is_none() {
                        return Err(bad(format!("worker {} is given terminator {i}", wp.name)));
                    }
                    staged[w].push((pos(i), 1, Action::Exec(i.0)));
                }
            }
            WorkerKind::Slice { function, call, args, dst } => {
                let func = code.func(function).ok_or_else(|| bad(format!("no function '{function}'")))?;
                let args = args
                    .iter()
                    .map(|a| {
                        Ok(match a {
                            Operand::Local(v) => ArgSrc::Slot(slot(v)?),
                            Operand::Global(g) => ArgSrc::Glob(gidx(g)?),
                            Operand::ArrayRef(g) => ArgSrc::Val(Value::Array(gidx(g)?)),
                            Operand::Int(x) => ArgSrc::Val(Value::Int(*x)),
                            Operand::Real(x) => ArgSrc::Val(Value::Real(*x)),
                            Operand::Null => ArgSrc::Val(Value::Node(None)),
                        })
                    })
                    .collect::<Result<Vec<_>, RunError>>()?;
                let dst = dst.as_deref().map(slot).transpose()?;
                staged[w].push((pos(*call), 1, Action::Call { func, args, dst }));
            }
        }
        if w > 0 {
            workers[w].owns = wp.owns.iter().map(|v| slot(v)).collect::<Result<_, _>>()?;
        }
    }
    for (w, mut st) in staged.into_iter().enumerate() {
        st.sort_by_key(|(p, o, _)| (*p, *o));
        workers[w].script = st.into_iter().map(|(_, _, a)| a).collect();
    }
    let mut privatize = Vec::new();
    let mut writeback = Vec::new();
    let mut hidden = BTreeSet::new();
    for pv in &plan.privatized {
        let g = gidx(&pv.global)? as usize;
        for c in &pv.copies {
            privatize.push((g, gidx(c)? as usize));
            hidden.insert(c.clone());
        }
        writeback.push((gidx(&pv.owner)? as usize, g));
    }
    Ok(Prepared { plan, code, entry, header, body, foreign, captures, driver_outputs, workers, privatize, writeback, hidden })
}

struct WorkerOut {
    frame: Vec<Value>,
    items: u64,
    /// (channel, enqueues, full stalls) per output.
    sent: Vec<(usize, u64, u64)>,
    /// (channel, dequeues, empty stalls) per input.
    received: Vec<(usize, u64, u64)>,
    error: Option<RunError>,
}

/// Raises the abort flag if the owning thread unwinds.
struct AbortOnPanic<'a>(&'a AtomicBool);

impl Drop for AbortOnPanic<'_> {
    fn drop(&mut self) {
        if std::thread::panicking() {
            self.0.store(true, Ordering::SeqCst);
        }
    }
}

fn block_err(worker: &str, e: BlockError, timeout: Duration) -> RunError {
    match e {
        BlockError::Aborted => RunError::Worker { worker: worker.to_string(), message: "aborted".into() },
        BlockError::Timeout(_) => RunError::Deadlock { timeout, stats: format!("worker {worker} blocked") },
    }
}

#[allow(clippy::too_many_arguments)]
fn worker_main(
    rt: &Prepared,
    w: usize,
    mem: &Memory,
    heap: &crate::ir::Heap,
    mut frame: Vec<Value>,
    mut inputs: Vec<Consumer<Record>>,
    mut outputs: Vec<Producer<Record>>,
    abort: &AtomicBool,
    timeout: Duration,
) -> WorkerOut {
    let _guard = AbortOnPanic(abort);
    let wr = &rt.workers[w];
    let ctl = Control { abort, timeout };
    let mut m = Machine::new(&rt.code, mem, heap, &InterpOptions::default());
    let mut recs: Vec<Record> = vec![Record::new(); inputs.len()];
    let mut pending: Vec<Record> = vec![Record::new(); outputs.len()];
    let mut items = 0u64;
    let result: Result<(), RunError> = (|| {
        loop {
            let mut closed = 0;
            for (k, c) in inputs.iter_mut().enumerate() {
                match c.dequeue(ctl).map_err(|e| block_err(&wr.name, e, timeout))? {
                    Dequeued::Item(r) => recs[k] = r,
                    Dequeued::Closed => closed += 1,
                }
            }
            if closed == inputs.len() {
                return Ok(());
            }
            if closed > 0 {
                return Err(RunError::Worker { worker: wr.name.clone(), message: "inputs ended unevenly".into() });
            }
            for a in &wr.script {
                match a {
                    Action::Restore { input, field, slot } => frame[*slot as usize] = recs[*input][*field],
                    Action::Exec(id) => m.exec_id(rt.entry, *id, &mut frame)?,
                    Action::Call { func, args, dst } => {
                        let vals: SmallVec<[Value; 6]> = args
                            .iter()
                            .map(|a| match a {
                                ArgSrc::Slot(s) => frame[*s as usize],
                                ArgSrc::Glob(g) => mem.get(*g as usize, 0),
                                ArgSrc::Val(v) => *v,
                            })
                            .collect();
                        let r = m.call(*func, &vals)?;
                        if let Some(d) = dst {
                            frame[*d as usize] = r.ok_or_else(|| RunError::Worker {
                                worker: wr.name.clone(),
                                message: "slice returned no value".into(),
                            })?;
                        }
                    }
                    Action::Capture { output, slot } => pending[*output].push(frame[*slot as usize]),
                }
            }
            for (k, p) in outputs.iter_mut().enumerate() {
                p.enqueue(std::mem::take(&mut pending[k]), ctl).map_err(|e| block_err(&wr.name, e, timeout))?;
            }
            items += 1;
        }
    })();
    let error = match result {
        Ok(()) => None,
        Err(RunError::Interp(e)) => Some(RunError::Worker { worker: wr.name.clone(), message: e.to_string() }),
        Err(e) => Some(e),
    };
    if error.is_some() {
        abort.store(true, Ordering::SeqCst);
    }
    let sent = wr.outputs.iter().zip(&outputs).map(|(&c, p)| (c, p.stats.enqueues, p.stats.full_stalls)).collect();
    let received = wr.inputs.iter().zip(&inputs).map(|(&c, q)| (c, q.stats.dequeues, q.stats.empty_stalls)).collect();
    drop(outputs);
    WorkerOut { frame, items, sent, received, error }
}

struct Session<'s> {
    outputs: Vec<Producer<Record>>,
    handles: Vec<(usize, ScopedJoinHandle<'s, WorkerOut>)>,
    start: Instant,
    items: u64,
}

/// The stage-0 hook: runs the loop's control in the main thread, starts
/// workers on loop entry and joins them on loop exit.
struct Driver<'s, 'e: 's> {
    scope: &'s Scope<'s, 'e>,
    rt: &'e Prepared<'e>,
    mem: &'e Memory,
    heap: &'e crate::ir::Heap,
    abort: &'e AtomicBool,
    timeout: Duration,
    session: Option<Session<'s>>,
    pending: Vec<Record>,
    elapsed: Duration,
    items: u64,
    worker_items: Vec<u64>,
    stats: Vec<ChannelStats>,
    error: Option<RunError>,
}

impl<'s, 'e: 's> Driver<'s, 'e> {
    fn fail(&mut self, e: RunError) -> InterpError {
        let msg = e.to_string();
        self.abort.store(true, Ordering::SeqCst);
        if self.error.is_none() {
            self.error = Some(e);
        }
        InterpError::Pipeline(msg)
    }

    fn start(&mut self, frame: &[Value]) -> Result<(), InterpError> {
        let rt = self.rt;
        for &(g, c) in &rt.privatize {
            self.mem.copy(g, c);
        }
        let n = rt.workers.len();
        let mut prods: Vec<Option<Producer<Record>>> = Vec::new();
        let mut cons: Vec<Option<Consumer<Record>>> = Vec::new();
        for ch in &rt.plan.channels {
            let (p, c) = queue::channel(ch.capacity).map_err(|e| self.fail(RunError::Config(e.to_string())))?;
            prods.push(Some(p));
            cons.push(Some(c));
        }
        let outputs = rt.driver_outputs.iter().map(|&c| prods[c].take().unwrap()).collect();
        let mut handles = Vec::new();
        for w in 1..n {
            let ins: Vec<Consumer<Record>> = rt.workers[w].inputs.iter().map(|&c| cons[c].take().unwrap()).collect();
            let outs: Vec<Producer<Record>> = rt.workers[w].outputs.iter().map(|&c| prods[c].take().unwrap()).collect();
            let snapshot = frame.to_vec();
            let (mem, heap, abort, timeout) = (self.mem, self.heap, self.abort, self.timeout);
            let h = std::thread::Builder::new()
                .name(format!("dswp-{}", rt.workers[w].name))
                .spawn_scoped(self.scope, move || worker_main(rt, w, mem, heap, snapshot, ins, outs, abort, timeout))
                .map_err(|e| self.fail(RunError::Config(format!("spawn failed: {e}"))))?;
            handles.push((w, h));
        }
        self.pending = vec![Record::new(); rt.driver_outputs.len()];
        self.session = Some(Session { outputs, handles, start: Instant::now(), items: 0 });
        Ok(())
    }

    fn flush(&mut self) -> Result<(), InterpError> {
        let ctl = Control { abort: self.abort, timeout: self.timeout };
        let Some(s) = self.session.as_mut() else { return Ok(()) };
        let mut err = None;
        for (k, p) in s.outputs.iter_mut().enumerate() {
            if let Err(e) = p.enqueue(std::mem::take(&mut self.pending[k]), ctl) {
                err = Some(block_err("L", e, self.timeout));
                break;
            }
        }
        s.items += 1;
        match err {
            Some(e) => Err(self.fail(e)),
            None => Ok(()),
        }
    }

    /// Closes the driver's channels, joins every worker and merges results.
    fn finish(&mut self, frame: Option<&mut [Value]>) -> Result<(), InterpError> {
        let Some(s) = self.session.take() else { return Ok(()) };
        let Session { outputs, handles, start, items } = s;
        for (k, p) in outputs.iter().enumerate() {
            let c = self.rt.driver_outputs[k];
            self.stats[c].enqueues += p.stats.enqueues;
            self.stats[c].full_stalls += p.stats.full_stalls;
        }
        drop(outputs);
        let mut first_err: Option<RunError> = None;
        let mut frames = Vec::new();
        self.worker_items = vec![0; self.rt.workers.len()];
        self.worker_items[0] = items;
        for (w, h) in handles {
            match h.join() {
                Ok(out) => {
                    for (c, e, f) in &out.sent {
                        self.stats[*c].enqueues += e;
                        self.stats[*c].full_stalls += f;
                    }
                    for (c, d, e) in &out.received {
                        self.stats[*c].dequeues += d;
                        self.stats[*c].empty_stalls += e;
                    }
                    self.worker_items[w] = out.items;
                    if let Some(e) = out.error {
                        // prefer a root cause over the aborts it triggered
                        let is_abort = matches!(&e, RunError::Worker { message, .. } if message == "aborted");
                        if first_err.is_none() || (!is_abort && matches!(&first_err, Some(RunError::Worker { message, .. }) if message == "aborted")) {
                            first_err = Some(e);
                        }
                    }
                    frames.push((w, out.frame));
                }
                Err(_) => {
                    if !matches!(first_err, Some(RunError::Panic(_))) {
                        first_err = Some(RunError::Panic(self.rt.workers[w].name.clone()));
                    }
                }
            }
        }
        self.elapsed += start.elapsed();
        self.items += items;
        if let Some(mut e) = first_err {
            if let RunError::Deadlock { stats, .. } = &mut e {
                *stats = format!("{stats}; {:?}", self.stats);
            }
            return Err(self.fail(e));
        }
        if let Some(bad) = self.worker_items.iter().position(|&n| n != items) {
            let e = RunError::Worker {
                worker: self.rt.workers[bad].name.clone(),
                message: format!("processed {} items, driver {items}", self.worker_items[bad]),
            };
            return Err(self.fail(e));
        }
        if let Some(frame) = frame {
            for (w, wf) in frames {
                for &s in &self.rt.workers[w].owns {
                    frame[s as usize] = wf[s as usize];
                }
            }
        }
        for &(from, to) in &self.rt.writeback {
            self.mem.copy(from, to);
        }
        Ok(())
    }
}

impl<'s, 'e: 's> Hook for Driver<'s, 'e> {
    const ACTIVE: bool = true;

    #[inline]
    fn foreign(&self, id: u32) -> bool {
        self.rt.foreign[id as usize]
    }

    #[inline]
    fn on_skip(&mut self, id: u32, frame: &[Value]) -> Result<(), InterpError> {
        for &(out, slot) in &self.rt.captures[id as usize] {
            self.pending[out].push(frame[slot as usize]);
        }
        Ok(())
    }

    fn on_edge(&mut self, from: u32, to: u32, frame: &mut [Value]) -> Result<(), InterpError> {
        let rt = self.rt;
        if to == rt.header {
            if rt.body[from as usize] {
                self.flush()
            } else {
                self.start(frame)
            }
        } else if from == rt.header && !rt.body[to as usize] {
            self.finish(Some(frame))
        } else {
            Ok(())
        }
    }
}

/// Runs `plan` with one thread per non-driver worker.
pub fn execute_plan(plan: &PipelinePlan, input: &Input, cfg: &RunConfig) -> Result<RunReport, RunError> {
    if cfg.repetitions < 1 {
        return Err(RunError::Config("repetitions must be >= 1".into()));
    }
    if cfg.workers < plan.worker_count {
        return Err(RunError::Config(format!("plan needs {} workers, config allows {}", plan.worker_count, cfg.workers)));
    }
    let rt = prepare(plan)?;
    let mut times = Vec::new();
    let mut outputs: Option<BTreeMap<String, Output>> = None;
    let mut stats: Vec<ChannelStats> =
        plan.channels.iter().map(|c| ChannelStats { name: c.name.clone(), ..Default::default() }).collect();
    let mut items = 0;
    let mut worker_items = vec![0; plan.workers.len()];
    for _ in 0..cfg.repetitions {
        let mem = Memory::new(&plan.program.globals, &input.init)?;
        let abort = AtomicBool::new(false);
        let (ret, elapsed, it, wi, st) = std::thread::scope(|s| -> Result<_, RunError> {
            let mut m = Machine::new(&rt.code, &mem, &input.heap, &InterpOptions::default());
            let mut frame = m.frame(rt.entry, &input.args)?;
            let mut d = Driver {
                scope: s,
                rt: &rt,
                mem: &mem,
                heap: &input.heap,
                abort: &abort,
                timeout: cfg.watchdog,
                session: None,
                pending: Vec::new(),
                elapsed: Duration::ZERO,
                items: 0,
                worker_items: vec![0; rt.workers.len()],
                stats: stats.iter().map(|c| ChannelStats { name: c.name.clone(), ..Default::default() }).collect(),
                error: None,
            };
            let r = m.run(rt.entry, &mut frame, &mut d);
            if r.is_err() {
                abort.store(true, Ordering::SeqCst);
                let _ = d.finish(None);
            }
            match (r, d.error.take()) {
                (Err(_), Some(e)) => Err(e),
                (Err(e), None) if rt.workers.len() > 1 => {
                    Err(RunError::Worker { worker: rt.workers[0].name.clone(), message: e.to_string() })
                }
                (Err(e), None) => Err(e.into()),
                (Ok(ret), _) => Ok((ret, d.elapsed, d.items, d.worker_items.clone(), std::mem::take(&mut d.stats))),
            }
        })?;
        let mut out = collect_outputs(&plan.program, &mem, ret);
        out.retain(|k, _| !rt.hidden.contains(k));
        match &outputs {
            Some(o) if o != &out => return Err(RunError::Nondeterministic),
            Some(_) => {}
            None => outputs = Some(out),
        }
        for (a, b) in stats.iter_mut().zip(st) {
            a.enqueues += b.enqueues;
            a.dequeues += b.dequeues;
            a.full_stalls += b.full_stalls;
            a.empty_stalls += b.empty_stalls;
        }
        items = it;
        worker_items = wi;
        times.push(elapsed.as_secs_f64());
    }
    let mode = match plan.mode {
        crate::partition::PlanMode::Sequential => Mode::Sequential,
        crate::partition::PlanMode::Dswp => Mode::Dswp,
        crate::partition::PlanMode::DswpSlice => Mode::DswpSlice,
    };
    Ok(RunReport {
        mode,
        outputs: outputs.unwrap(),
        median_time: median(&times),
        wall_times: times,
        items_processed: items,
        worker_items: plan.workers.iter().map(|w| w.name.clone()).zip(worker_items).collect(),
        channel_stats: stats,
        worker_count: plan.worker_count,
    })
}

/// Plans (for the pipelined modes) and runs `p` in `cfg.mode`.
pub fn execute(p: &Program, input: &Input, cfg: &RunConfig) -> Result<(RunReport, Option<PipelinePlan>), RunError> {
    cfg.check()?;
    match cfg.mode {
        Mode::Sequential => Ok((execute_sequential(p, input, cfg)?, None)),
        Mode::Dswp | Mode::DswpSlice => {
            let plan = plan_dswp_slice(p, &cfg.plan_config())?;
            let r = execute_plan(&plan, input, cfg)?;
            Ok((r, Some(plan)))
        }
    }
}

/// Output differences between two runs; empty means equivalent. Integers
/// must match exactly, reals within `tol` relative.
pub fn output_diffs(a: &BTreeMap<String, Output>, b: &BTreeMap<String, Output>, tol: f64) -> Vec<String> {
    let mut out = Vec::new();
    let keys: BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    for k in keys {
        match (a.get(k), b.get(k)) {
            (Some(x), Some(y)) => {
                let (xs, ys): (&[Value], &[Value]) = match (x, y) {
                    (Output::Scalar(x), Output::Scalar(y)) => (std::slice::from_ref(x), std::slice::from_ref(y)),
                    (Output::Array(x), Output::Array(y)) if x.len() == y.len() => (x, y),
                    _ => {
                        out.push(format!("{k}: shape differs"));
                        continue;
                    }
                };
                for (i, (u, v)) in xs.iter().zip(ys).enumerate() {
                    if !value_close(*u, *v, tol) {
                        out.push(format!("{k}[{i}]: {u:?} vs {v:?}"));
                        if out.len() > 20 {
                            return out;
                        }
                    }
                }
            }
            (Some(_), None) => out.push(format!("{k}: missing on the right")),
            (None, _) => out.push(format!("{k}: missing on the left")),
        }
    }
    out
}

fn value_close(a: Value, b: Value, tol: f64) -> bool {
    match (a, b) {
        (Value::Real(x), Value::Real(y)) => {
            x.to_bits() == y.to_bits() || x == y || (x - y).abs() <= tol * x.abs().max(y.abs())
        }
        _ => a == b,
    }
}

/// True iff both reports hold the same output locations with matching values.
pub fn verify_equivalence(a: &RunReport, b: &RunReport, tol: f64) -> bool {
    output_diffs(&a.outputs, &b.outputs, tol).is_empty()
}
