//! Shared test helpers: a random structured-program generator and a few
//! brute-force graph oracles.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dswp_core::ir::{Function, Input, Value};

#[derive(Clone, Debug)]
pub struct GenConfig {
    /// Statements per statement list, drawn from 0..=max_stmts.
    pub max_stmts: usize,
    pub max_depth: usize,
    /// Emit only straight-line code (no ifs or loops) in main.
    pub straight: bool,
    /// Allow calls to the impure helper and to `work`.
    pub calls: bool,
    /// Start main with a loop.
    pub main_loop: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { max_stmts: 5, max_depth: 2, straight: false, calls: true, main_loop: false }
    }
}

pub const GLOBALS: &str = "global real ga[8]\nglobal real gb[8]\nglobal real gc[8]\nglobal real gs\nglobal real gt\n";

struct Ctx {
    ints: Vec<String>,
    reals: Vec<String>,
    /// Readable arrays; the last one may be an array param.
    arrays: Vec<String>,
    stores: Vec<String>,
    in_main: bool,
}

struct Gen {
    rng: ChaCha8Rng,
    cfg: GenConfig,
    out: String,
    labels: usize,
    temps: usize,
    work_returns: bool,
}

impl Gen {
    fn label(&mut self) -> String {
        self.labels += 1;
        format!("b{}", self.labels)
    }

    fn temp(&mut self, prefix: &str) -> String {
        self.temps += 1;
        format!("{prefix}{}", self.temps)
    }

    fn line(&mut self, s: &str) {
        self.out.push_str("  ");
        self.out.push_str(s);
        self.out.push('\n');
    }

    fn open(&mut self, l: &str) {
        writeln!(self.out, "{l}:").unwrap();
    }

    fn pick<'a>(&mut self, xs: &'a [String]) -> &'a str {
        &xs[self.rng.gen_range(0..xs.len())]
    }

    fn int(&mut self, c: &Ctx) -> String {
        self.pick(&c.ints).to_string()
    }

    fn real(&mut self, c: &Ctx) -> String {
        self.pick(&c.reals).to_string()
    }

    /// Writable ints exclude loop counters (named `l*`).
    fn int_dst(&mut self, c: &Ctx) -> String {
        let w: Vec<String> = c.ints.iter().filter(|v| !v.starts_with('l')).cloned().collect();
        self.pick(&w).to_string()
    }

    fn index(&mut self, c: &Ctx) -> String {
        let i = self.int(c);
        self.line(&format!("ix = {i} % 8"));
        "ix".into()
    }

    fn stmts(&mut self, c: &mut Ctx, depth: usize) {
        let n = self.rng.gen_range(0..=self.cfg.max_stmts);
        for _ in 0..n {
            self.stmt(c, depth);
        }
    }

    fn stmt(&mut self, c: &mut Ctx, depth: usize) {
        let structured = !(self.cfg.straight && c.in_main) && depth < self.cfg.max_depth;
        let choice = self.rng.gen_range(0..if structured { 16 } else { 13 });
        match choice {
            0 => {
                let (d, s) = (self.int_dst(c), self.int(c));
                let k = self.rng.gen_range(1..9);
                self.line(&format!("{d} = {s} % {k}"));
            }
            1 => {
                let (d, s) = (self.int_dst(c), self.int(c));
                let k = self.rng.gen_range(0..9);
                self.line(&format!("{d} = {s} + {k}"));
            }
            2 => {
                let (d, a, b) = (self.int_dst(c), self.int(c), self.int(c));
                self.line(&format!("{d} = {a} + {b}"));
                self.line(&format!("{d} = {d} % 1009"));
            }
            3 | 4 => {
                let (d, a, b) = (self.real(c), self.real(c), self.real(c));
                let op = ["+", "-"][self.rng.gen_range(0..2)];
                self.line(&format!("{d} = {a} {op} {b}"));
            }
            5 => {
                let (d, a) = (self.real(c), self.real(c));
                let f = ["sin", "cos", "fabs"][self.rng.gen_range(0..3)];
                self.line(&format!("{d} = call {f}({a})"));
            }
            6 => {
                let (d, a) = (self.real(c), self.int(c));
                self.line(&format!("{d} = call toreal({a})"));
            }
            7 => {
                let (d, a) = (self.real(c), self.real(c));
                self.line(&format!("{d} = {a} * 0.5"));
            }
            8 => {
                let arr = self.pick(&c.arrays).to_string();
                let ix = self.index(c);
                let d = self.real(c);
                self.line(&format!("{d} = {arr}[{ix}]"));
            }
            9 => {
                let arr = self.pick(&c.stores).to_string();
                let ix = self.index(c);
                let v = self.real(c);
                self.line(&format!("{arr}[{ix}] = {v}"));
            }
            10 => {
                let g = ["gs", "gt"][self.rng.gen_range(0..2)];
                if self.rng.gen_bool(0.5) {
                    let d = self.real(c);
                    self.line(&format!("{d} = {g}"));
                } else {
                    let v = self.real(c);
                    self.line(&format!("{g} = {g} + {v}"));
                }
            }
            11 => {
                let (d, a, k) = (self.real(c), self.real(c), self.int(c));
                self.line(&format!("{d} = call pf({a}, {k})"));
            }
            12 => {
                if !self.cfg.calls {
                    return self.stmt(c, depth);
                }
                let (a, k) = (self.real(c), self.int(c));
                if c.in_main && self.rng.gen_bool(0.5) {
                    if self.work_returns {
                        let d = self.real(c);
                        self.line(&format!("{d} = call work({k}, {a}, gc)"));
                    } else {
                        self.line(&format!("call work({k}, {a}, gc)"));
                    }
                } else {
                    self.line(&format!("call imp({a}, {k})"));
                }
            }
            13 => self.if_stmt(c, depth),
            _ => self.loop_stmt(c, depth),
        }
    }

    fn if_stmt(&mut self, c: &mut Ctx, depth: usize) {
        let cv = self.temp("c");
        if self.rng.gen_bool(0.5) {
            let (a, b) = (self.int(c), self.int(c));
            self.line(&format!("{cv} = {a} < {b}"));
        } else {
            let (a, b) = (self.real(c), self.real(c));
            self.line(&format!("{cv} = {a} < {b}"));
        }
        let (t, e, j) = (self.label(), self.label(), self.label());
        let has_else = self.rng.gen_bool(0.5);
        let else_target = if has_else { e.clone() } else { j.clone() };
        self.line(&format!("br {cv} {t} {else_target}"));
        self.open(&t);
        self.stmts(c, depth + 1);
        self.line(&format!("jump {j}"));
        if has_else {
            self.open(&e);
            self.stmts(c, depth + 1);
            self.line(&format!("jump {j}"));
        }
        self.open(&j);
    }

    fn loop_stmt(&mut self, c: &mut Ctx, depth: usize) {
        let l = format!("l{depth}");
        let bound = format!("n{depth}");
        let src = self.int(c);
        let k = self.rng.gen_range(1..5);
        self.line(&format!("{bound} = {src} % {k}"));
        self.line(&format!("{bound} = {bound} + 1"));
        self.line(&format!("{l} = 0"));
        let (h, body, exit) = (self.label(), self.label(), self.label());
        self.line(&format!("jump {h}"));
        self.open(&h);
        let cv = self.temp("c");
        self.line(&format!("{cv} = {l} < {bound}"));
        self.line(&format!("br {cv} {body} {exit}"));
        self.open(&body);
        c.ints.push(l.clone());
        self.stmts(c, depth + 1);
        c.ints.pop();
        self.line(&format!("{l} = {l} + 1"));
        self.line(&format!("jump {h}"));
        self.open(&exit);
    }

    /// Declares and initializes some int and real locals.
    fn locals(&mut self, c: &mut Ctx, int_src: &str, real_src: &str) {
        let ni = self.rng.gen_range(1..=3);
        let nr = self.rng.gen_range(1..=3);
        for k in 0..ni {
            let v = format!("i{k}");
            if self.rng.gen_bool(0.5) {
                self.line(&format!("{v} = {int_src}"));
            } else {
                let x = self.rng.gen_range(0..20);
                self.line(&format!("{v} = {x}"));
            }
            c.ints.push(v);
        }
        for k in 0..nr {
            let v = format!("r{k}");
            if self.rng.gen_bool(0.5) {
                self.line(&format!("{v} = {real_src}"));
            } else {
                let x = self.rng.gen_range(-4.0..4.0f64);
                self.line(&format!("{v} = {x:.3}"));
            }
            c.reals.push(v);
        }
    }

    fn function(&mut self, header: &str, in_main: bool, ret: bool) {
        writeln!(self.out, "\n{header} {{").unwrap();
        self.open("b0");
        let mut c = Ctx {
            ints: vec!["n".into()],
            reals: vec!["x".into()],
            arrays: vec!["ga".into(), "gb".into()],
            stores: vec!["ga".into(), "gb".into()],
            in_main,
        };
        if !in_main {
            c.arrays.push("out".into());
            c.stores = vec!["gb".into(), "out".into()];
        }
        self.locals(&mut c, "n", "x");
        if in_main && self.cfg.main_loop && !self.cfg.straight {
            self.loop_stmt(&mut c, 0);
        }
        self.stmts(&mut c, 0);
        if ret {
            let r = self.real(&c);
            self.line(&format!("ret {r}"));
        } else {
            self.line("ret");
        }
        self.out.push_str("}\n");
    }

    fn pure_helper(&mut self) {
        self.out.push_str("\nfunc pf(x: real, k: int) pure {\nb0:\n");
        self.line("r = x * 0.5");
        for _ in 0..self.rng.gen_range(0..4) {
            match self.rng.gen_range(0..4) {
                0 => {
                    self.line("j = k % 8");
                    self.line("t = ga[j]");
                    self.line("r = r + t");
                }
                1 => self.line("r = r + gs"),
                2 => self.line("r = call sin(r)"),
                _ => {
                    self.line("t = call toreal(k)");
                    self.line("r = r - t");
                }
            }
        }
        self.line("ret r");
        self.out.push_str("}\n");
    }
}

const IMPURE_HELPER: &str = "
func imp(x: real, k: int) {
b0:
  j = k % 8
  gb[j] = x
  gt = gt + x
  ret
}
";

/// A random valid program. Entry `main(n: int, x: real)`, plus `work(n: int,
/// x: real, out: real[])`, a pure helper `pf` and an impure helper `imp`.
/// Ints stay non-negative; reals stay finite.
pub fn gen_program(seed: u64, cfg: &GenConfig) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let work_returns = rng.gen_bool(0.5);
    let mut g = Gen { rng, cfg: cfg.clone(), out: String::new(), labels: 0, temps: 0, work_returns };
    g.out.push_str("entry main\n");
    g.out.push_str(GLOBALS);
    g.function("func main(n: int, x: real)", true, true);
    g.labels = 0;
    g.temps = 0;
    let cfg_work = GenConfig { straight: false, ..cfg.clone() };
    let saved = std::mem::replace(&mut g.cfg, cfg_work);
    g.function("func work(n: int, x: real, out: real[])", false, work_returns);
    g.cfg = saved;
    g.pure_helper();
    g.out.push_str(IMPURE_HELPER);
    g.out
}

/// Seeded inputs for a generated program: main args plus global contents.
pub fn gen_input(seed: u64) -> Input {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut init = BTreeMap::new();
    for g in ["ga", "gb", "gc"] {
        init.insert(g.to_string(), (0..8).map(|_| Value::Real(rng.gen_range(-2.0..2.0))).collect());
    }
    for g in ["gs", "gt"] {
        init.insert(g.to_string(), vec![Value::Real(rng.gen_range(-2.0..2.0))]);
    }
    Input { args: vec![Value::Int(rng.gen_range(0..40)), Value::Real(rng.gen_range(-3.0..3.0))], heap: Default::default(), init }
}

/// A random CFG of `n` blocks: every block but the last ends in a jump or
/// a branch to arbitrary blocks; the last returns.
pub fn gen_cfg(seed: u64, n: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = String::from("func main(v: int) {\n");
    for b in 0..n {
        writeln!(s, "b{b}:").unwrap();
        s.push_str("  v = v + 1\n");
        if b + 1 == n {
            s.push_str("  ret\n");
        } else if rng.gen_bool(0.4) {
            writeln!(s, "  jump b{}", rng.gen_range(0..n)).unwrap();
        } else {
            writeln!(s, "  br v b{} b{}", rng.gen_range(0..n), rng.gen_range(0..n)).unwrap();
        }
    }
    s.push_str("}\n");
    s
}

/// Block successor lists of `f`.
pub fn successors(f: &Function) -> Vec<Vec<usize>> {
    f.blocks
        .iter()
        .map(|b| b.term.targets().iter().map(|t| f.block_index(t).unwrap()).collect())
        .collect()
}

/// Nodes reachable from `from` in `succ`, never entering `avoid`.
pub fn reach_avoiding(succ: &[Vec<usize>], from: usize, avoid: Option<usize>) -> BTreeSet<usize> {
    let mut seen = BTreeSet::new();
    if Some(from) == avoid {
        return seen;
    }
    let mut stack = vec![from];
    while let Some(x) = stack.pop() {
        if seen.insert(x) {
            for &y in &succ[x] {
                if Some(y) != avoid {
                    stack.push(y);
                }
            }
        }
    }
    seen
}

/// `d` dominates `x` iff `x` is unreachable from the entry once `d` is removed.
pub fn dominates(succ: &[Vec<usize>], d: usize, x: usize) -> bool {
    d == x || !reach_avoiding(succ, 0, Some(d)).contains(&x)
}

/// Back edges (latch, header) among blocks reachable from the entry.
pub fn back_edges(succ: &[Vec<usize>]) -> BTreeSet<(usize, usize)> {
    let reach = reach_avoiding(succ, 0, None);
    let mut out = BTreeSet::new();
    for &a in &reach {
        for &h in &succ[a] {
            if dominates(succ, h, a) {
                out.insert((a, h));
            }
        }
    }
    out
}

/// Reflexive-transitive closure by Warshall's algorithm.
pub fn warshall(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Vec<Vec<bool>> {
    let mut r = vec![vec![false; n]; n];
    for (k, row) in r.iter_mut().enumerate() {
        row[k] = true;
    }
    for (a, b) in edges {
        r[a][b] = true;
    }
    for k in 0..n {
        for i in 0..n {
            if r[i][k] {
                for j in 0..n {
                    if r[k][j] {
                        r[i][j] = true;
                    }
                }
            }
        }
    }
    r
}

/// Relative comparison used for reals throughout the tests.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    a.to_bits() == b.to_bits() || (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

/// Slice oracle: Warshall closure over the reversed flow and control edges
/// of the PDG. Induction updates keep their control predecessors only.
pub fn slice_oracle(g: &dswp_core::pdg::Pdg, seeds: &BTreeSet<dswp_core::ir::InstrId>) -> BTreeSet<dswp_core::ir::InstrId> {
    use dswp_core::pdg::DepKind;
    let ids: Vec<_> = g.nodes.iter().copied().collect();
    let at: BTreeMap<_, usize> = ids.iter().enumerate().map(|(k, &i)| (i, k)).collect();
    let mut edges = Vec::new();
    for e in g.data.iter().filter(|e| e.dep == DepKind::Flow) {
        if !g.induction_updates.contains(&e.dst) {
            edges.push((at[&e.dst], at[&e.src]));
        }
    }
    for e in &g.control {
        edges.push((at[&e.dst], at[&e.src]));
    }
    let r = warshall(ids.len(), edges);
    let mut out = BTreeSet::new();
    for s in seeds.iter().filter_map(|s| at.get(s)) {
        for (k, &id) in ids.iter().enumerate() {
            if r[*s][k] {
                out.insert(id);
            }
        }
    }
    out
}

pub fn outputs_close(a: &dswp_core::ir::Output, b: &dswp_core::ir::Output, tol: f64) -> bool {
    use dswp_core::ir::Output;
    let same = |x: &Value, y: &Value| match (x, y) {
        (Value::Real(p), Value::Real(q)) => close(*p, *q, tol),
        _ => x == y,
    };
    match (a, b) {
        (Output::Scalar(x), Output::Scalar(y)) => same(x, y),
        (Output::Array(x), Output::Array(y)) => x.len() == y.len() && x.iter().zip(y).all(|(p, q)| same(p, q)),
        _ => false,
    }
}

/// Arguments for any function of a generated program: ints get `n`, reals
/// `x`, array params the global `gc`.
pub fn args_for(f: &Function, input: &Input) -> Vec<Value> {
    use dswp_core::ir::ParamKind;
    f.params
        .iter()
        .map(|p| match p.kind {
            ParamKind::Int => input.args[0],
            ParamKind::Real => input.args[1],
            ParamKind::RealArray => Value::Array(2),
            ParamKind::Node => Value::Node(None),
        })
        .collect()
}

/// Checks the two kept slices of the running example's `Calc` against the
/// expected instruction sets. Returns a description of the first mismatch.
pub fn check_calc_slices() -> Result<(), String> {
    use dswp_core::ir::parse_program;
    use dswp_core::slicer::slice_function;
    let p = parse_program(dswp_core::bench::CALC_EXAMPLE).map_err(|e| e.to_string())?;
    let f = p.function("Calc").ok_or("no Calc")?;
    let (slices, _) = slice_function(&p, f).map_err(|e| e.to_string())?;
    if slices.len() != 2 {
        return Err(format!("expected 2 kept slices, got {}", slices.len()));
    }
    let skeleton = ["j = 0", "c = j < M", "br c body exit", "j = j + 1"];
    let shared = ["s = call seq(j)", "t = da_in + s", "m = m + t"];
    let own1 = ["cm = call cos(m)", "u = da_in + cm", "o = da_out[0]", "o2 = o + u", "da_out[0] = o2"];
    let own2 = ["b[0] = 0.0", "bj = b[j]", "y = call xx(m)", "bj2 = bj + y", "b[j] = bj2"];
    let expect = [("da_out", &own1), ("b", &own2)];
    for (s, (name, own)) in slices.iter().zip(expect) {
        if s.criterion.name != name {
            return Err(format!("criterion {} where {name} was expected", s.criterion.name));
        }
        let got: BTreeSet<String> = s.all().iter().map(|&i| f.describe(i)).collect();
        let want: BTreeSet<String> = skeleton.iter().chain(&shared).chain(own.iter()).map(|x| x.to_string()).collect();
        if got != want {
            return Err(format!("slice on {name}: got {got:?}, want {want:?}"));
        }
    }
    Ok(())
}

/// A random PDG-shaped graph of 1..=12 nodes with data and control edges.
pub fn random_pdg(seed: u64) -> dswp_core::pdg::Pdg {
    use dswp_core::ir::InstrId;
    use dswp_core::pdg::{ControlEdge, DataEdge, DepKind, Pdg, Region};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=12u32);
    let density = rng.gen_range(0.0..0.35);
    let mut data = Vec::new();
    let mut control = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if !rng.gen_bool(density) {
                continue;
            }
            if a != b && rng.gen_bool(0.2) {
                control.push(ControlEdge { src: InstrId(a), dst: InstrId(b) });
            } else {
                let carried = a == b || rng.gen_bool(0.3);
                data.push(DataEdge { src: InstrId(a), dst: InstrId(b), loc: format!("v{a}"), carried, dep: DepKind::Flow, memory: false });
            }
        }
    }
    Pdg {
        function: "g".into(),
        region: Region::Function,
        nodes: (0..n).map(InstrId).collect(),
        data,
        control,
        induction_updates: BTreeSet::new(),
        calls: BTreeSet::new(),
        labels: BTreeMap::new(),
    }
}

/// Checks SCCs and the condensation of `g` against mutual reachability.
pub fn check_scc(g: &dswp_core::pdg::Pdg) -> Result<(), String> {
    use dswp_core::ir::InstrId;
    use dswp_core::scc::{build_dagscc, compute_sccs};
    let n = g.nodes.len();
    let all: Vec<(usize, usize)> =
        g.data.iter().map(|e| (e.src.index(), e.dst.index())).chain(g.control.iter().map(|e| (e.src.index(), e.dst.index()))).collect();
    let r = warshall(n, all.iter().copied());
    let want: BTreeSet<BTreeSet<usize>> = (0..n).map(|a| (0..n).filter(|&b| r[a][b] && r[b][a]).collect()).collect();
    let sccs = compute_sccs(g);
    let got: BTreeSet<BTreeSet<usize>> = sccs.iter().map(|c| c.members.iter().map(|m| m.index()).collect()).collect();
    if got != want {
        return Err(format!("partition {got:?}, expected {want:?}"));
    }
    if sccs.iter().map(|c| c.members.len()).sum::<usize>() != n {
        return Err("components overlap".into());
    }
    let d = build_dagscc(g, sccs, &|_| 1);
    let of = |i: usize| d.component_of[&InstrId(i as u32)];
    let want_edges: BTreeSet<(usize, usize)> = all.iter().map(|&(a, b)| (of(a), of(b))).filter(|(a, b)| a != b).collect();
    if d.edges != want_edges {
        return Err(format!("condensation edges {:?}, expected {want_edges:?}", d.edges));
    }
    let k = d.components.len();
    let cr = warshall(k, d.edges.iter().copied());
    if d.edges.iter().any(|&(a, b)| cr[b][a]) {
        return Err("condensation has a cycle".into());
    }
    let mut order = d.topo_order.clone();
    order.sort_unstable();
    if order != (0..k).collect::<Vec<_>>() {
        return Err("topological order is not a permutation".into());
    }
    let rank: BTreeMap<usize, usize> = d.topo_order.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    if d.edges.iter().any(|(a, b)| rank[a] >= rank[b]) {
        return Err("topological order violated".into());
    }
    for c in &d.components {
        let rec = g.data.iter().any(|e| e.carried && of(e.src.index()) == c.id && of(e.dst.index()) == c.id);
        if rec != c.carries_recurrence {
            return Err(format!("component {} recurrence flag wrong", c.id));
        }
        if c.latency != c.members.len() as u64 {
            return Err("latency is not the member sum".into());
        }
    }
    // condensing the condensation changes nothing
    let mut h = g.clone();
    h.nodes = (0..k as u32).map(InstrId).collect();
    h.control.clear();
    h.data = d
        .edges
        .iter()
        .map(|&(a, b)| dswp_core::pdg::DataEdge {
            src: InstrId(a as u32),
            dst: InstrId(b as u32),
            loc: "x".into(),
            carried: false,
            dep: dswp_core::pdg::DepKind::Flow,
            memory: false,
        })
        .collect();
    let again = compute_sccs(&h);
    if again.len() != k || again.iter().any(|c| c.members.len() != 1) {
        return Err("condensation is not a fixed point".into());
    }
    Ok(())
}

/// Structural checks on a pipeline plan: the stage plan is legal for a
/// freshly derived DAG, workers partition the loop, and every value a
/// worker reads from another worker arrives on exactly one channel.
pub fn check_plan(plan: &dswp_core::partition::PipelinePlan) -> Result<(), String> {
    use dswp_core::ir::{find_loops, InstrId};
    use dswp_core::partition::{Direction, WorkerKind};
    use dswp_core::pdg::{build_pdg, Region};
    use dswp_core::scc::{build_dagscc, compute_sccs};

    let p = &plan.program;
    let f = p.function(&plan.function).ok_or("plan function missing")?;
    if plan.worker_count != plan.workers.len() {
        return Err("worker_count disagrees with the worker list".into());
    }
    let l = find_loops(f).map_err(|e| e.to_string())?.into_iter().find(|l| l.header == plan.loop_info.header).ok_or("loop missing")?;
    let g = build_pdg(p, f, &Region::Loop(l.clone())).map_err(|e| e.to_string())?;
    let d = build_dagscc(&g, compute_sccs(&g), &|_| 1);
    if d.components.len() == plan.stage_plan.stage_of().len() && !plan.stage_plan.is_legal(&d) {
        return Err("stage plan is not legal for the loop's DAG".into());
    }

    // partition of the loop body
    let ids = l.ids(f);
    let mut seen: BTreeMap<InstrId, usize> = BTreeMap::new();
    let mut call: Option<InstrId> = None;
    for w in &plan.workers {
        if let WorkerKind::Slice { call: c, .. } = &w.kind {
            if w.instrs != [*c] || call.is_some_and(|x| x != *c) {
                return Err(format!("slice worker {} does not run exactly the sliced call", w.name));
            }
            call = Some(*c);
            continue;
        }
        for &i in &w.instrs {
            if let Some(o) = seen.insert(i, w.id) {
                return Err(format!("{i} run by workers {o} and {}", w.id));
            }
        }
    }
    if let Some(c) = call {
        if seen.contains_key(&c) {
            return Err("sliced call also runs unsliced".into());
        }
        seen.insert(c, usize::MAX);
    }
    let covered: BTreeSet<InstrId> = seen.keys().copied().collect();
    if covered != ids {
        return Err(format!("workers cover {covered:?}, loop has {ids:?}"));
    }
    if plan.workers.first().map(|w| &w.kind) != Some(&WorkerKind::Driver) {
        return Err("worker 0 is not the driver".into());
    }

    // who defines each loop local
    let mut loop_defs = BTreeSet::new();
    for i in &ids {
        if let Some(v) = f.instr(*i).and_then(|x| x.local_def()) {
            loop_defs.insert(v.to_string());
        }
    }
    let mut definer: BTreeMap<String, usize> = BTreeMap::new();
    for w in plan.workers.iter().skip(1) {
        let defs: Vec<String> = match &w.kind {
            WorkerKind::Slice { dst, .. } => dst.iter().cloned().collect(),
            _ => w.instrs.iter().filter_map(|&i| f.instr(i)?.local_def()).map(str::to_string).collect(),
        };
        for v in defs {
            if definer.insert(v.clone(), w.id).is_some_and(|o| o != w.id) {
                return Err(format!("'{v}' has two defining workers"));
            }
        }
    }
    for v in loop_defs {
        definer.entry(v).or_insert(0);
    }

    let mut want: BTreeSet<(usize, usize, String, InstrId)> = BTreeSet::new();
    for w in &plan.workers {
        let uses: Vec<(InstrId, String)> = match &w.kind {
            WorkerKind::Slice { args, call, .. } => args.iter().filter_map(|o| o.local()).map(|v| (*call, v.to_string())).collect(),
            _ => w
                .instrs
                .iter()
                .flat_map(|&i| {
                    let u: Vec<String> = match (f.instr(i), f.terminator(i)) {
                        (Some(x), _) => x.local_uses().into_iter().map(str::to_string).collect(),
                        (None, Some(t)) => t.local_uses().into_iter().map(str::to_string).collect(),
                        _ => vec![],
                    };
                    u.into_iter().map(move |v| (i, v))
                })
                .collect(),
        };
        for (at, v) in uses {
            if let Some(&o) = definer.get(&v) {
                if o != w.id {
                    if o > w.id {
                        return Err(format!("worker {} reads '{v}' from later worker {o}", w.id));
                    }
                    want.insert((o, w.id, v, at));
                }
            }
        }
    }
    let mut got = BTreeSet::new();
    for c in &plan.channels {
        if c.producer >= c.consumer {
            return Err(format!("channel {} does not flow forward", c.name));
        }
        for fl in &c.fields {
            if !got.insert((c.producer, c.consumer, fl.var.clone(), fl.at)) {
                return Err(format!("{}@{} delivered twice", fl.var, fl.at));
            }
        }
        if c.direction == Direction::Return {
            let ok = matches!(&plan.workers[c.producer].kind, WorkerKind::Slice { dst: Some(r), .. } if c.fields.iter().any(|x| &x.var == r));
            if !ok {
                return Err(format!("return channel {} does not carry a slice result", c.name));
            }
        }
    }
    if got != want {
        return Err(format!("channel fields {got:?}, expected {want:?}"));
    }
    for w in plan.workers.iter().skip(1) {
        if !plan.channels.iter().any(|c| c.consumer == w.id) {
            return Err(format!("worker {} has no input channel", w.name));
        }
    }
    Ok(())
}

/// Runs `p` under `mode` and compares every output with a plain
/// interpretation. Returns the worker count used, or None when the program
/// has no candidate loop.
pub fn check_against_interpreter(
    p: &dswp_core::ir::Program,
    input: &Input,
    mode: dswp_core::runtime::Mode,
    workers: usize,
    tol: f64,
) -> Result<Option<usize>, String> {
    use dswp_core::ir::{interpret, InterpOptions};
    use dswp_core::partition::{CostError, PlanError};
    use dswp_core::runtime::{execute, RunConfig, RunError};
    let want = interpret(p, input, &InterpOptions { trace: false, fuel: u64::MAX }).map_err(|e| format!("interpreter: {e}"))?;
    let cfg = RunConfig { mode, workers, watchdog: std::time::Duration::from_secs(30), ..RunConfig::default() };
    let report = match execute(p, input, &cfg) {
        Ok((r, _)) => r,
        Err(RunError::Plan(PlanError::Cost(CostError::NoCandidate(_)))) => return Ok(None),
        Err(e) => return Err(format!("{}: {e}", mode.name())),
    };
    if report.outputs.keys().collect::<Vec<_>>() != want.outputs.keys().collect::<Vec<_>>() {
        return Err("output names differ".into());
    }
    for (k, v) in &want.outputs {
        if !outputs_close(v, &report.outputs[k], tol) {
            return Err(format!("{}: '{k}' is {:?}, expected {v:?}", mode.name(), report.outputs[k]));
        }
    }
    Ok(Some(report.worker_count))
}

#[derive(Clone, Copy, Debug)]
pub enum QOp {
    Enq,
    Deq,
    Close,
}

/// Every sequence of up to `len` operations on every capacity in 2..=4,
/// checked against a bounded VecDeque. No enqueue follows a close. Also
/// checks that elements left in the ring are dropped exactly once.
/// Returns the number of sequences checked.
pub fn queue_enumeration(len: usize) -> Result<usize, String> {
    use dswp_core::queue::{channel, TryDequeue};
    use std::collections::VecDeque;
    use std::sync::Arc;
    let ops = [QOp::Enq, QOp::Deq, QOp::Close];
    let mut checked = 0;
    for cap in 2..=4usize {
        let bound = cap.next_power_of_two();
        for n in 0..=len {
            for code in 0..3usize.pow(n as u32) {
                let seq: Vec<QOp> = (0..n).map(|k| ops[code / 3usize.pow(k as u32) % 3]).collect();
                let closes = seq.iter().position(|o| matches!(o, QOp::Close));
                if let Some(c) = closes {
                    if seq[c + 1..].iter().any(|o| !matches!(o, QOp::Deq)) {
                        continue;
                    }
                }
                let token = Arc::new(());
                {
                    let (mut p, mut c) = channel::<(u32, Arc<()>)>(cap).map_err(|e| e.to_string())?;
                    if p.capacity() != bound || c.capacity() != bound {
                        return Err(format!("capacity {cap} gave {}", p.capacity()));
                    }
                    let mut model: VecDeque<u32> = VecDeque::new();
                    let mut closed = false;
                    let mut next = 0u32;
                    let (mut enqs, mut deqs) = (0u64, 0u64);
                    for op in &seq {
                        match op {
                            QOp::Enq => {
                                let ok = p.try_enqueue((next, token.clone())).is_ok();
                                if ok != (model.len() < bound) {
                                    return Err(format!("{seq:?} cap {cap}: enqueue {ok}"));
                                }
                                if ok {
                                    model.push_back(next);
                                    enqs += 1;
                                }
                                next += 1;
                            }
                            QOp::Deq => {
                                let got = match c.try_dequeue() {
                                    TryDequeue::Item((v, _)) => Some(Some(v)),
                                    TryDequeue::Empty => None,
                                    TryDequeue::Closed => Some(None),
                                };
                                let want = match model.pop_front() {
                                    Some(v) => {
                                        deqs += 1;
                                        Some(Some(v))
                                    }
                                    None if closed => Some(None),
                                    None => None,
                                };
                                if got != want {
                                    return Err(format!("{seq:?} cap {cap}: dequeue {got:?}, expected {want:?}"));
                                }
                            }
                            QOp::Close => {
                                p.close();
                                closed = true;
                            }
                        }
                    }
                    if Arc::strong_count(&token) != model.len() + 1 {
                        return Err(format!("{seq:?}: {} live elements, expected {}", Arc::strong_count(&token) - 1, model.len()));
                    }
                    if p.stats.enqueues != enqs || c.stats.dequeues != deqs {
                        return Err("stats disagree".into());
                    }
                }
                if Arc::strong_count(&token) != 1 {
                    return Err(format!("{seq:?}: elements leaked"));
                }
                checked += 1;
            }
        }
    }
    Ok(checked)
}

/// Streams 0..n through a ring of `capacity` between two threads and checks
/// that the consumer sees exactly that sequence followed by Closed.
pub fn queue_stress(n: u64, capacity: usize) -> Result<(), String> {
    use dswp_core::queue::{channel, Control, Dequeued};
    use std::sync::atomic::AtomicBool;
    use std::time::Duration;
    let (mut p, mut c) = channel::<u64>(capacity).map_err(|e| e.to_string())?;
    let abort = AtomicBool::new(false);
    let ctl = Control { abort: &abort, timeout: Duration::from_secs(60) };
    std::thread::scope(|s| {
        let h = s.spawn(move || -> Result<(), String> {
            for k in 0..n {
                p.enqueue(k, ctl).map_err(|e| e.to_string())?;
            }
            Ok(())
        });
        let mut want = 0u64;
        loop {
            match c.dequeue(ctl).map_err(|e| e.to_string())? {
                Dequeued::Item(v) if v == want => want += 1,
                Dequeued::Item(v) => return Err(format!("got {v}, expected {want}")),
                Dequeued::Closed => break,
            }
        }
        h.join().map_err(|_| "producer panicked".to_string())??;
        if want != n {
            return Err(format!("stream ended after {want} of {n}"));
        }
        if c.stats.dequeues != n {
            return Err("dequeue count wrong".into());
        }
        Ok(())
    })
}

/// compute_slice against the Warshall oracle on every function of at most
/// ten instructions in `programs` generated programs. Returns the number of
/// slices compared.
pub fn check_slicer_oracle(programs: u64) -> Result<usize, String> {
    use dswp_core::ir::{function_to_string, parse_program};
    use dswp_core::pdg::{build_pdg, Region};
    use dswp_core::slicer::{collect_criteria, compute_slice};
    let cfg = GenConfig { max_stmts: 3, ..GenConfig::default() };
    let mut checked = 0;
    for seed in 0..programs {
        let p = parse_program(&gen_program(seed, &cfg)).map_err(|e| e.to_string())?;
        for f in p.functions.iter().filter(|f| f.instrs().count() <= 10) {
            let Ok(criteria) = collect_criteria(&p, f) else { continue };
            let g = build_pdg(&p, f, &Region::Function).map_err(|e| e.to_string())?;
            for c in &criteria {
                let s = compute_slice(f, &g, c);
                let want = slice_oracle(&g, &c.seeds);
                if s.instrs != want {
                    return Err(format!("seed {seed}, {} on {}: {:?} vs {want:?}\n{}", f.name, c.name, s.instrs, function_to_string(f)));
                }
                checked += 1;
            }
        }
    }
    Ok(checked)
}
