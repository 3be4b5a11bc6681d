use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dswp_core::bench::{
    calibrate, decide_suite, emit_csv, parse_params, run_suite, sweep_overhead, BenchConfig, CalibrateConfig, Scale,
    Workload,
};
use dswp_core::ir::{find_loops, parse_program, validate, Input, Program, Value};
use dswp_core::partition::{
    decide_profitability_with, plan_dswp_slice, select_candidate_loop, LatencyModel, PlanConfig, SliceMode,
    DEFAULT_COMM_COST, DEFAULT_THRESHOLD,
};
use dswp_core::pdg::{build_pdg, Region};
use dswp_core::runtime::{execute, execute_sequential, output_diffs, Mode, RunConfig};
use dswp_core::scc::{build_dagscc, compute_sccs};
use dswp_core::slicer::{materialize, slice_function};

#[derive(Parser)]
#[command(name = "dswp", version, about = "Decoupled software pipelining with backward slicing")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse and validate a program; print its canonical form.
    Parse {
        file: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Dependence graph and SCC condensation of a loop or function.
    Analyze {
        file: PathBuf,
        /// Analyze a whole function instead of the candidate loop.
        #[arg(long)]
        function: Option<String>,
        #[arg(long)]
        pdg_dot: Option<PathBuf>,
        #[arg(long)]
        dag_dot: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Backward slices of a function, one per output.
    Slice {
        file: PathBuf,
        #[arg(long)]
        function: String,
        #[arg(long)]
        json: bool,
    },
    /// Pipeline plan for the candidate loop.
    Plan {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t = SliceArg::On)]
        slice: SliceArg,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        #[arg(long, default_value_t = DEFAULT_COMM_COST)]
        comm_cost: f64,
        #[arg(long)]
        json: bool,
    },
    /// Run a program or shipped workload and check it against sequential.
    Run(RunArgs),
    /// Benchmark suite, overhead sweep, or profitability decisions.
    Bench(BenchArgs),
    /// Measure the channel round trip in model cycles.
    Calibrate {
        #[arg(long, default_value_t = 100_000)]
        elements: usize,
        #[arg(long, default_value_t = 1024)]
        capacity: usize,
        #[arg(long, default_value_t = 5)]
        rounds: usize,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SliceArg {
    On,
    Off,
    Auto,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Sequential,
    Dswp,
    DswpSlice,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Sequential => Mode::Sequential,
            ModeArg::Dswp => Mode::Dswp,
            ModeArg::DswpSlice => Mode::DswpSlice,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Program file; omit when using --workload.
    file: Option<PathBuf>,
    #[arg(long, conflicts_with = "file")]
    workload: Option<String>,
    /// Workload params such as `N=10,M=500`.
    #[arg(long, default_value = "")]
    params: String,
    /// Entry arguments for a program file, such as `3,2.5`.
    #[arg(long, default_value = "")]
    args: String,
    #[arg(long, value_enum, default_value_t = ModeArg::DswpSlice)]
    mode: ModeArg,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[arg(long, default_value_t = 1024)]
    queue_capacity: usize,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated workload names; all by default.
    #[arg(long)]
    workloads: Option<String>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = vec![ModeArg::Sequential, ModeArg::Dswp, ModeArg::DswpSlice])]
    modes: Vec<ModeArg>,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[arg(long, default_value_t = 1024)]
    queue_capacity: usize,
    #[arg(long)]
    paper_scale: bool,
    /// Fixed comm cost in cycles; calibrated when absent.
    #[arg(long)]
    comm_cost: Option<f64>,
    /// Multiplies the comm cost before deciding profitability.
    #[arg(long, default_value_t = 1.0)]
    comm_scale: f64,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
    /// Only report the profitability decisions.
    #[arg(long)]
    decide_only: bool,
    /// Sweep the overhead program over --n and --m instead.
    #[arg(long)]
    sweep: bool,
    #[arg(long, value_delimiter = ',', default_values_t = vec![2, 6, 12, 24])]
    n: Vec<i64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![2, 10, 50, 200, 800])]
    m: Vec<i64>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
}

fn load(path: &Path) -> Result<Program> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let p = parse_program(&text).with_context(|| format!("parsing {}", path.display()))?;
    let diags = validate(&p);
    if !diags.is_empty() {
        let msgs: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
        bail!("{} is invalid:\n  {}", path.display(), msgs.join("\n  "));
    }
    Ok(p)
}

fn parse_args(s: &str) -> Result<Vec<Value>> {
    s.split(',')
        .map(str::trim)
        .filter(|a| !a.is_empty())
        .map(|a| {
            if a == "null" {
                Ok(Value::Node(None))
            } else if let Ok(i) = a.parse::<i64>() {
                Ok(Value::Int(i))
            } else {
                a.parse::<f64>().map(Value::Real).with_context(|| format!("bad argument '{a}'"))
            }
        })
        .collect()
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn cmd_analyze(file: &Path, function: Option<String>, pdg_dot: Option<PathBuf>, dag_dot: Option<PathBuf>, json: bool) -> Result<()> {
    let p = load(file)?;
    let model = LatencyModel::default();
    let (f, region) = match &function {
        Some(name) => (p.function(name).with_context(|| format!("no function '{name}'"))?, Region::Function),
        None => {
            let (l, _) = select_candidate_loop(&p, &model)?;
            (p.function(&l.function).unwrap(), Region::Loop(l))
        }
    };
    let g = build_pdg(&p, f, &region)?;
    let weights = match &region {
        Region::Loop(l) => model.iteration_weights(&p, f, l),
        Region::Function => BTreeMap::new(),
    };
    let dag = build_dagscc(&g, compute_sccs(&g), &|id| weights.get(&id).copied().unwrap_or(1));
    if json {
        let v = serde_json::json!({ "pdg": g.to_json(), "dag": dag });
        println!("{}", serde_json::to_string_pretty(&v)?);
        return Ok(());
    }
    if pdg_dot.is_none() && dag_dot.is_none() {
        println!("{}", g.to_dot());
        println!("{}", dag.to_dot());
        return Ok(());
    }
    if let Some(path) = &pdg_dot {
        write_or_print(Some(path), &g.to_dot())?;
    }
    if let Some(path) = &dag_dot {
        write_or_print(Some(path), &dag.to_dot())?;
    }
    let loops = find_loops(f)?.len();
    println!("{}: {} node(s), {} SCC(s), {} loop(s)", f.name, g.nodes.len(), dag.components.len(), loops);
    Ok(())
}

fn cmd_slice(file: &Path, function: &str, json: bool) -> Result<()> {
    let p = load(file)?;
    let f = p.function(function).with_context(|| format!("no function '{function}'"))?;
    let (slices, _) = slice_function(&p, f)?;
    if json {
        let listing: Vec<_> = slices
            .iter()
            .map(|s| {
                serde_json::json!({
                    "criterion": s.criterion.name,
                    "covers": s.covers,
                    "instrs": s.instrs,
                    "control": s.control_skeleton,
                    "params": s.params_used,
                })
            })
            .collect();
        println!("{}", serde_json::to_string_pretty(&listing)?);
        return Ok(());
    }
    for (k, s) in slices.iter().enumerate() {
        let g = materialize(f, s, &format!("{}__s{}", f.name, k + 1))?;
        println!("# slice {} on {{{}}}", k + 1, s.covers.join(","));
        println!("{}", dswp_core::ir::function_to_string(&g));
    }
    Ok(())
}

fn cmd_plan(file: &Path, slice: SliceArg, workers: usize, comm_cost: f64, json: bool) -> Result<()> {
    let p = load(file)?;
    let cfg = PlanConfig {
        max_workers: workers,
        slice: match slice {
            SliceArg::On => SliceMode::On,
            SliceArg::Off => SliceMode::Off,
            SliceArg::Auto => SliceMode::Auto,
        },
        comm_cost,
        ..PlanConfig::default()
    };
    let plan = plan_dswp_slice(&p, &cfg)?;
    let d = decide_profitability_with(&plan, &plan.model, comm_cost, DEFAULT_THRESHOLD);
    if json {
        let mut v = plan.to_json();
        v["profitability"] = serde_json::to_value(&d)?;
        println!("{}", serde_json::to_string_pretty(&v)?);
    } else {
        println!("{}", plan.report());
        println!("profitability: apply={} predicted {:.3}x; {}", d.apply, d.predicted_speedup, d.rationale);
    }
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<bool> {
    if a.tolerance.is_nan() || a.tolerance < 0.0 {
        bail!("tolerance must be >= 0");
    }
    let (p, input) = match (&a.file, &a.workload) {
        (Some(f), None) => {
            let p = load(f)?;
            (p, Input { args: parse_args(&a.args)?, heap: Arc::default(), init: BTreeMap::new() })
        }
        (None, Some(name)) => {
            let w = Workload::new(name, &parse_params(&a.params)?, Scale::Desk, a.seed)?;
            (w.program(), w.input())
        }
        _ => bail!("give a program file or --workload"),
    };
    let cfg = RunConfig {
        mode: a.mode.into(),
        workers: a.workers,
        queue_capacity: a.queue_capacity,
        repetitions: a.reps,
        seed: a.seed,
        ..RunConfig::default()
    };
    let (report, plan) = execute(&p, &input, &cfg)?;
    let seq = if cfg.mode == Mode::Sequential {
        report.clone()
    } else {
        execute_sequential(&p, &input, &RunConfig { mode: Mode::Sequential, ..cfg.clone() })?
    };
    let diffs = output_diffs(&seq.outputs, &report.outputs, a.tolerance);
    if a.json {
        let v = serde_json::json!({
            "report": report,
            "sequential_median_s": seq.median_time,
            "equivalent": diffs.is_empty(),
            "diffs": diffs,
        });
        println!("{}", serde_json::to_string_pretty(&v)?);
    } else {
        if let Some(plan) = &plan {
            println!("{}", plan.report());
        }
        println!(
            "{}: median {:.6}s over {} rep(s), {} item(s); sequential {:.6}s",
            report.mode.name(),
            report.median_time,
            report.wall_times.len(),
            report.items_processed,
            seq.median_time
        );
        for c in &report.channel_stats {
            println!(
                "  {}: {} enq, {} deq, {} full stalls, {} empty stalls",
                c.name, c.enqueues, c.dequeues, c.full_stalls, c.empty_stalls
            );
        }
        if diffs.is_empty() {
            println!("outputs equal sequential");
        } else {
            println!("outputs DIFFER from sequential:");
            for d in &diffs {
                println!("  {d}");
            }
        }
    }
    Ok(diffs.is_empty())
}

fn cmd_bench(a: BenchArgs) -> Result<bool> {
    if a.tolerance.is_nan() || a.tolerance < 0.0 {
        bail!("tolerance must be >= 0");
    }
    let names: Vec<String> = match &a.workloads {
        Some(s) => s.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect(),
        None => dswp_core::bench::names().into_iter().map(String::from).collect(),
    };
    let scale = if a.paper_scale { Scale::Paper } else { Scale::Desk };
    let workloads = names.iter().map(|n| Workload::new(n, &BTreeMap::new(), scale, 0)).collect::<Result<Vec<_>, _>>()?;
    let mut cfg = BenchConfig {
        reps: a.reps,
        workers: a.workers,
        queue_capacity: a.queue_capacity,
        tolerance: a.tolerance,
        threshold: a.threshold,
        ..BenchConfig::default()
    };
    if a.sweep {
        let s = sweep_overhead(&a.n, &a.m, &cfg)?;
        for c in &s.cells {
            println!(
                "N={:<5} M={:<8} sequential {:.6}s  dswp {:.6}s  {}",
                c.n,
                c.m,
                c.sequential_s,
                c.dswp_s,
                if c.dswp_wins() { "dswp wins" } else { "" }
            );
        }
        for (n, m) in &s.frontier {
            println!("frontier N={n}: {}", m.map_or("none".into(), |m| format!("M >= {m}")));
        }
        println!("monotone in M: {}", s.is_monotone());
        let r = s.to_bench_report();
        if let Some(path) = &a.csv {
            emit_csv(&r, path)?;
        }
        if let Some(path) = &a.json {
            std::fs::write(path, serde_json::to_string_pretty(&s)?)?;
        }
        return Ok(s.cells.iter().all(|c| c.equivalent));
    }
    let calibration = match a.comm_cost {
        Some(c) => {
            cfg.comm_cost = c;
            None
        }
        None => {
            let c = calibrate(&CalibrateConfig { rounds: 3, ..CalibrateConfig::default() });
            cfg.comm_cost = c.comm_cost;
            Some(c)
        }
    };
    cfg.comm_cost *= a.comm_scale;
    if a.decide_only {
        for c in decide_suite(&workloads, &cfg) {
            let ds: Vec<String> =
                c.decisions.iter().map(|d| format!("{} apply={} {:.2}x", d.mode.name(), d.apply, d.predicted_speedup)).collect();
            println!("{} [{}]: chosen {} ({})", c.workload, c.param_set, c.chosen.name(), ds.join(", "));
        }
        return Ok(true);
    }
    let modes: Vec<Mode> = a.modes.iter().map(|&m| m.into()).collect();
    let mut report = run_suite(&workloads, &modes, &cfg)?;
    report.calibration = calibration;
    print!("{}", report.render());
    if let Some(path) = &a.csv {
        emit_csv(&report, path)?;
    }
    if let Some(path) = &a.json {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report.all_equivalent())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Parse { file, json } => {
            let p = load(&file)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&p)?);
            } else {
                print!("{}", p.pretty());
            }
            Ok(true)
        }
        Cmd::Analyze { file, function, pdg_dot, dag_dot, json } => cmd_analyze(&file, function, pdg_dot, dag_dot, json).map(|_| true),
        Cmd::Slice { file, function, json } => cmd_slice(&file, &function, json).map(|_| true),
        Cmd::Plan { file, slice, workers, comm_cost, json } => cmd_plan(&file, slice, workers, comm_cost, json).map(|_| true),
        Cmd::Run(a) => cmd_run(a),
        Cmd::Bench(a) => cmd_bench(a),
        Cmd::Calibrate { elements, capacity, rounds, json } => {
            let c = calibrate(&CalibrateConfig { elements, capacity, rounds, ..CalibrateConfig::default() });
            if json {
                println!("{}", serde_json::to_string_pretty(&c)?);
            } else {
                println!(
                    "round trip {:.1} ns/element, interpreter {:.2} ns/cycle, comm cost {:.1} cycles",
                    c.ns_per_element, c.ns_per_cycle, c.comm_cost
                );
                if let Some(w) = &c.warning {
                    println!("warning: {w}");
                }
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
