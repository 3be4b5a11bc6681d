use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::calibrate::Calibration;
use super::workloads::Workload;
use crate::ir::{Input, Program};
use crate::partition::{
    decide_profitability_with, plan_dswp_slice, LatencyModel, PipelinePlan, PlanMode, DEFAULT_COMM_COST,
    DEFAULT_THRESHOLD,
};
use crate::queue::DEFAULT_CAPACITY;
use crate::runtime::{execute_plan, execute_sequential, output_diffs, Mode, RunConfig, RunReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub reps: usize,
    pub workers: usize,
    pub queue_capacity: usize,
    pub tolerance: f64,
    /// Cycles per record, fed to the profitability decision.
    pub comm_cost: f64,
    pub threshold: f64,
    pub model: LatencyModel,
    pub watchdog: Duration,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            reps: 5,
            workers: 4,
            queue_capacity: DEFAULT_CAPACITY,
            tolerance: 1e-9,
            comm_cost: DEFAULT_COMM_COST,
            threshold: DEFAULT_THRESHOLD,
            model: LatencyModel::default(),
            watchdog: Duration::from_secs(10),
        }
    }
}

impl BenchConfig {
    pub fn run_config(&self, mode: Mode) -> RunConfig {
        RunConfig {
            mode,
            workers: self.workers,
            queue_capacity: self.queue_capacity,
            repetitions: self.reps.max(1),
            seed: 0,
            watchdog: self.watchdog,
            model: self.model.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub workload: String,
    pub param_set: String,
    pub mode: Mode,
    /// `None` when the row is n/a or failed verification.
    pub median_s: Option<f64>,
    pub speedup: Option<f64>,
    pub equivalent: bool,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub mode: Mode,
    pub apply: bool,
    pub predicted_speedup: f64,
    pub rationale: String,
}

/// What the profitability gate picks for one workload instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    pub workload: String,
    pub param_set: String,
    pub chosen: Mode,
    pub decisions: Vec<Decision>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub logical_cpus: usize,
    pub os: String,
    pub arch: String,
    pub optimized: bool,
}

impl Environment {
    pub fn detect() -> Environment {
        Environment {
            logical_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            optimized: !cfg!(debug_assertions),
        }
    }

    pub fn describe(&self) -> String {
        format!(
            "{} logical cpu(s), {}/{}, {} build",
            self.logical_cpus,
            self.os,
            self.arch,
            if self.optimized { "optimized" } else { "debug" }
        )
    }
}

/// Published execution times kept for comparison; not asserted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub workload: String,
    pub what: String,
}

pub fn reference_targets() -> Vec<Reference> {
    let r = |w: &str, what: &str| Reference { workload: w.into(), what: what.into() };
    vec![
        r("fftlike", "iter 40: sequential 5.474 s, dswp-slice 3.013 s (about 1.82x)"),
        r("sphharm", "dswp-slice about 1.4x to 1.5x over sequential, dswp alone about 1.3x"),
        r("linkedlist2", "iter 50: sequential 1.707 s, dswp-slice 0.915 s (about 1.87x)"),
        r("all", "headline: about 2.4x over sequential and about 1.6x over dswp"),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub choices: Vec<Choice>,
    pub comm_cost: f64,
    pub calibration: Option<Calibration>,
    pub environment: Environment,
    pub references: Vec<Reference>,
}

impl BenchReport {
    pub fn all_equivalent(&self) -> bool {
        self.rows.iter().all(|r| r.equivalent)
    }

    pub fn row(&self, workload: &str, mode: Mode) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.workload == workload && r.mode == mode)
    }

    pub fn choice(&self, workload: &str) -> Option<&Choice> {
        self.choices.iter().find(|c| c.workload == workload)
    }

    /// Human-readable table.
    pub fn render(&self) -> String {
        let mut s = format!("environment: {}\ncomm cost: {:.1} cycles/record\n", self.environment.describe(), self.comm_cost);
        s.push_str(&format!("{:<12} {:<22} {:<11} {:>11} {:>8}  note\n", "workload", "params", "mode", "median_s", "speedup"));
        for r in &self.rows {
            s.push_str(&format!(
                "{:<12} {:<22} {:<11} {:>11} {:>8}  {}\n",
                r.workload,
                r.param_set,
                r.mode.name(),
                r.median_s.map_or("n/a".into(), |t| format!("{t:.6}")),
                r.speedup.map_or("n/a".into(), |x| format!("{x:.3}")),
                r.note.as_deref().unwrap_or("")
            ));
        }
        for c in &self.choices {
            let ds: Vec<String> = c
                .decisions
                .iter()
                .map(|d| format!("{} {:.2}x{}", d.mode.name(), d.predicted_speedup, if d.apply { "" } else { " (rejected)" }))
                .collect();
            s.push_str(&format!("chosen for {} [{}]: {} ({})\n", c.workload, c.param_set, c.chosen.name(), ds.join(", ")));
        }
        for r in &self.references {
            s.push_str(&format!("reference {}: {}\n", r.workload, r.what));
        }
        s
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("empty report")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("sequential run of {workload} failed: {message}")]
    Baseline { workload: String, message: String },
}

fn plan_for(p: &Program, mode: Mode, cfg: &BenchConfig) -> Result<PipelinePlan, String> {
    let mut pc = cfg.run_config(mode).plan_config();
    pc.comm_cost = cfg.comm_cost;
    let plan = plan_dswp_slice(p, &pc).map_err(|e| e.to_string())?;
    if plan.mode == PlanMode::Sequential {
        return Err(plan.decision_log.last().cloned().unwrap_or_else(|| "no pipeline".into()));
    }
    Ok(plan)
}

fn timed_row(w: &Workload, mode: Mode, seq: &RunReport, r: Result<RunReport, String>, tol: f64) -> BenchRow {
    let mut row = BenchRow {
        workload: w.name.clone(),
        param_set: w.param_set(),
        mode,
        median_s: None,
        speedup: None,
        equivalent: true,
        note: None,
    };
    match r {
        Err(e) => {
            row.equivalent = false;
            row.note = Some(format!("run failed: {e}"));
        }
        Ok(r) => {
            let diffs = output_diffs(&seq.outputs, &r.outputs, tol);
            if diffs.is_empty() {
                row.median_s = Some(r.median_time);
                row.speedup = (r.median_time > 0.0).then(|| seq.median_time / r.median_time);
            } else {
                row.equivalent = false;
                row.note = Some(format!("outputs differ: {}", diffs.join("; ")));
            }
        }
    }
    row
}

/// Runs every workload in every mode, verifying each pipelined run against
/// the sequential one before recording its time.
pub fn run_suite(workloads: &[Workload], modes: &[Mode], cfg: &BenchConfig) -> Result<BenchReport, BenchError> {
    let mut rows = Vec::new();
    let mut choices = Vec::new();
    for w in workloads {
        let p = w.program();
        let input: Input = w.input();
        let seq = execute_sequential(&p, &input, &cfg.run_config(Mode::Sequential))
            .map_err(|e| BenchError::Baseline { workload: w.name.clone(), message: e.to_string() })?;
        let mut decisions = Vec::new();
        for &mode in modes {
            if mode == Mode::Sequential {
                rows.push(BenchRow {
                    workload: w.name.clone(),
                    param_set: w.param_set(),
                    mode,
                    median_s: Some(seq.median_time),
                    speedup: Some(1.0),
                    equivalent: true,
                    note: None,
                });
                continue;
            }
            match plan_for(&p, mode, cfg) {
                Err(why) => rows.push(BenchRow {
                    workload: w.name.clone(),
                    param_set: w.param_set(),
                    mode,
                    median_s: None,
                    speedup: None,
                    equivalent: true,
                    note: Some(format!("n/a: {why}")),
                }),
                Ok(plan) => {
                    let d = decide_profitability_with(&plan, &plan.model, cfg.comm_cost, cfg.threshold);
                    decisions.push(Decision {
                        mode,
                        apply: d.apply,
                        predicted_speedup: d.predicted_speedup,
                        rationale: d.rationale,
                    });
                    let r = execute_plan(&plan, &input, &cfg.run_config(mode)).map_err(|e| e.to_string());
                    let mut row = timed_row(w, mode, &seq, r, cfg.tolerance);
                    if mode == Mode::DswpSlice && plan.mode == PlanMode::Dswp {
                        row.note.get_or_insert_with(|| "slicing not applicable; ran plain dswp".into());
                    }
                    rows.push(row);
                }
            }
        }
        let chosen = decisions
            .iter()
            .filter(|d| d.apply)
            .max_by(|a, b| a.predicted_speedup.total_cmp(&b.predicted_speedup))
            .map_or(Mode::Sequential, |d| d.mode);
        choices.push(Choice { workload: w.name.clone(), param_set: w.param_set(), chosen, decisions });
    }
    Ok(BenchReport {
        rows,
        choices,
        comm_cost: cfg.comm_cost,
        calibration: None,
        environment: Environment::detect(),
        references: reference_targets(),
    })
}

/// Profitability decisions only, without running anything.
pub fn decide_suite(workloads: &[Workload], cfg: &BenchConfig) -> Vec<Choice> {
    workloads
        .iter()
        .map(|w| {
            let p = w.program();
            let decisions: Vec<Decision> = [Mode::Dswp, Mode::DswpSlice]
                .into_iter()
                .filter_map(|mode| {
                    let plan = plan_for(&p, mode, cfg).ok()?;
                    let d = decide_profitability_with(&plan, &plan.model, cfg.comm_cost, cfg.threshold);
                    Some(Decision { mode, apply: d.apply, predicted_speedup: d.predicted_speedup, rationale: d.rationale })
                })
                .collect();
            let chosen = decisions
                .iter()
                .filter(|d| d.apply)
                .max_by(|a, b| a.predicted_speedup.total_cmp(&b.predicted_speedup))
                .map_or(Mode::Sequential, |d| d.mode);
            Choice { workload: w.name.clone(), param_set: w.param_set(), chosen, decisions }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub n: i64,
    pub m: i64,
    pub sequential_s: f64,
    pub dswp_s: f64,
    pub equivalent: bool,
}

impl SweepCell {
    pub fn dswp_wins(&self) -> bool {
        self.dswp_s < self.sequential_s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
    /// Per N, the smallest M from which dswp wins at every larger M.
    pub frontier: BTreeMap<i64, Option<i64>>,
    pub environment: Environment,
}

impl SweepReport {
    /// For each N, the wins form a suffix of the M range.
    pub fn is_monotone(&self) -> bool {
        let mut by_n: BTreeMap<i64, Vec<&SweepCell>> = BTreeMap::new();
        for c in &self.cells {
            by_n.entry(c.n).or_default().push(c);
        }
        by_n.values_mut().all(|cs| {
            cs.sort_by_key(|c| c.m);
            cs.windows(2).all(|w| !w[0].dswp_wins() || w[1].dswp_wins())
        })
    }

    pub fn crossover_exists(&self) -> bool {
        self.cells.iter().any(|c| c.dswp_wins()) && self.cells.iter().any(|c| !c.dswp_wins())
    }

    pub fn to_bench_report(&self) -> BenchReport {
        let mut rows = Vec::new();
        for c in &self.cells {
            let ps = format!("N={};M={}", c.n, c.m);
            for (mode, t) in [(Mode::Sequential, c.sequential_s), (Mode::Dswp, c.dswp_s)] {
                rows.push(BenchRow {
                    workload: "overhead".into(),
                    param_set: ps.clone(),
                    mode,
                    median_s: Some(t),
                    speedup: (t > 0.0).then(|| c.sequential_s / t),
                    equivalent: c.equivalent,
                    note: None,
                });
            }
        }
        BenchReport {
            rows,
            choices: vec![],
            comm_cost: f64::NAN,
            calibration: None,
            environment: self.environment.clone(),
            references: vec![],
        }
    }
}

fn frontier_of(cells: &[SweepCell]) -> BTreeMap<i64, Option<i64>> {
    let mut by_n: BTreeMap<i64, Vec<&SweepCell>> = BTreeMap::new();
    for c in cells {
        by_n.entry(c.n).or_default().push(c);
    }
    by_n.into_iter()
        .map(|(n, mut cs)| {
            cs.sort_by_key(|c| c.m);
            let mut first = None;
            for c in cs.iter().rev() {
                if c.dswp_wins() {
                    first = Some(c.m);
                } else {
                    break;
                }
            }
            (n, first)
        })
        .collect()
}

/// Sequential vs dswp medians of the overhead program over an N x M grid.
pub fn sweep_overhead(ns: &[i64], ms: &[i64], cfg: &BenchConfig) -> Result<SweepReport, BenchError> {
    let mut cells = Vec::new();
    for &n in ns {
        for &m in ms {
            let params: BTreeMap<String, i64> = [("N".to_string(), n), ("M".to_string(), m)].into();
            let w = Workload::new("overhead", &params, super::Scale::Desk, 0).map_err(|e| BenchError::Baseline {
                workload: "overhead".into(),
                message: e.to_string(),
            })?;
            let p = w.program();
            let input = w.input();
            let seq = execute_sequential(&p, &input, &cfg.run_config(Mode::Sequential))
                .map_err(|e| BenchError::Baseline { workload: w.param_set(), message: e.to_string() })?;
            let r = plan_for(&p, Mode::Dswp, cfg)
                .and_then(|plan| execute_plan(&plan, &input, &cfg.run_config(Mode::Dswp)).map_err(|e| e.to_string()));
            let (dswp_s, equivalent) = match r {
                Ok(r) => (r.median_time, output_diffs(&seq.outputs, &r.outputs, cfg.tolerance).is_empty()),
                Err(_) => (f64::INFINITY, false),
            };
            cells.push(SweepCell { n, m, sequential_s: seq.median_time, dswp_s, equivalent });
        }
    }
    let frontier = frontier_of(&cells);
    Ok(SweepReport { cells, frontier, environment: Environment::detect() })
}

fn fmt_opt(x: Option<f64>, digits: usize) -> String {
    x.map_or("n/a".into(), |v| format!("{v:.digits$}"))
}

/// The CSV text of `r`: header `workload,param_set,mode,median_s,speedup`.
pub fn csv_string(r: &BenchReport) -> Result<String, BenchError> {
    if r.rows.is_empty() {
        return Err(BenchError::Empty);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["workload", "param_set", "mode", "median_s", "speedup"])?;
    for row in &r.rows {
        w.write_record([
            row.workload.as_str(),
            row.param_set.as_str(),
            row.mode.name(),
            &fmt_opt(row.median_s, 9),
            &fmt_opt(row.speedup, 6),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn emit_csv(r: &BenchReport, path: &Path) -> Result<(), BenchError> {
    let s = csv_string(r)?;
    std::fs::write(path, s)?;
    Ok(())
}
