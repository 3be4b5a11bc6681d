//! The shipped workloads: mini-IR sources plus seeded input builders.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{parse_program, Heap, Input, Program, Value};

/// Upper bound for params that index the 4096-cell global arrays.
const ARRAY_LEN: i64 = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    /// Sized to run the whole suite in a few minutes.
    Desk,
    Paper,
}

#[derive(Clone, Copy, Debug)]
pub struct ParamSpec {
    pub name: &'static str,
    pub desk: i64,
    pub paper: i64,
    /// Largest allowed value.
    pub max: i64,
    /// Range for randomized draws.
    pub random: (i64, i64),
}

#[derive(Clone, Copy, Debug)]
pub struct WorkloadSpec {
    pub name: &'static str,
    pub summary: &'static str,
    pub source: &'static str,
    pub params: &'static [ParamSpec],
    /// One of the sliced case studies, as opposed to the overhead program.
    pub case_study: bool,
}

const fn param(name: &'static str, desk: i64, paper: i64, max: i64, random: (i64, i64)) -> ParamSpec {
    ParamSpec { name, desk, paper, max, random }
}

pub const WORKLOADS: [WorkloadSpec; 6] = [
    WorkloadSpec {
        name: "overhead",
        summary: "two halves of a row filter, N rows of M passes",
        source: include_str!("../../workloads/overhead.mir"),
        params: &[param("N", 40, 1000, ARRAY_LEN, (1, 12)), param("M", 200, 10000, i64::MAX, (1, 30))],
        case_study: false,
    },
    WorkloadSpec {
        name: "fftlike",
        summary: "Fourier transform bins, real and imaginary parts",
        source: include_str!("../../workloads/fftlike.mir"),
        params: &[param("iters", 64, 1024, ARRAY_LEN, (1, 24)), param("n", 512, 4096, ARRAY_LEN, (1, 64))],
        case_study: true,
    },
    WorkloadSpec {
        name: "deriv",
        summary: "first and second derivatives of N functions",
        source: include_str!("../../workloads/deriv.mir"),
        params: &[param("N", 400, 4096, ARRAY_LEN, (1, 40)), param("M", 30, 30, i64::MAX, (1, 30))],
        case_study: true,
    },
    WorkloadSpec {
        name: "sphharm",
        summary: "spherical harmonic coefficients over a sweep of angles",
        source: include_str!("../../workloads/sphharm.mir"),
        params: &[param("iters", 200, 2000, i64::MAX, (1, 30)), param("L", 400, 4000, ARRAY_LEN, (1, 64))],
        case_study: true,
    },
    WorkloadSpec {
        name: "linkedlist2",
        summary: "list of lists, callee without return value",
        source: include_str!("../../workloads/linkedlist2.mir"),
        params: &[param("outer", 50, 50, ARRAY_LEN, (1, 20)), param("inner", 1000, 100000, i64::MAX, (1, 64))],
        case_study: true,
    },
    WorkloadSpec {
        name: "linkedlist3",
        summary: "list of lists, callee returns a value",
        source: include_str!("../../workloads/linkedlist3.mir"),
        params: &[param("outer", 50, 50, ARRAY_LEN, (1, 20)), param("inner", 1000, 100000, i64::MAX, (1, 64))],
        case_study: true,
    },
];

/// The running example: a list traversal calling Calc once per node.
pub const CALC_EXAMPLE: &str = include_str!("../../workloads/calc.mir");

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum WorkloadError {
    #[error("unknown workload '{0}'")]
    Unknown(String),
    #[error("workload '{workload}' has no parameter '{param}'")]
    UnknownParam { workload: String, param: String },
    #[error("parameter {param} = {value} out of range 1..={max}")]
    Range { param: String, value: i64, max: i64 },
    #[error("bad parameter syntax '{0}' (expected name=value)")]
    Syntax(String),
}

pub fn spec(name: &str) -> Result<&'static WorkloadSpec, WorkloadError> {
    WORKLOADS.iter().find(|w| w.name == name).ok_or_else(|| WorkloadError::Unknown(name.to_string()))
}

pub fn names() -> Vec<&'static str> {
    WORKLOADS.iter().map(|w| w.name).collect()
}

/// A workload instance: a shipped program with concrete params and seed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workload {
    pub name: String,
    pub params: BTreeMap<String, i64>,
    pub seed: u64,
}

impl Workload {
    pub fn new(name: &str, overrides: &BTreeMap<String, i64>, scale: Scale, seed: u64) -> Result<Workload, WorkloadError> {
        let s = spec(name)?;
        let mut params = BTreeMap::new();
        for p in s.params {
            params.insert(p.name.to_string(), if scale == Scale::Paper { p.paper } else { p.desk });
        }
        for (k, v) in overrides {
            if !params.contains_key(k) {
                return Err(WorkloadError::UnknownParam { workload: name.into(), param: k.clone() });
            }
            params.insert(k.clone(), *v);
        }
        let w = Workload { name: name.into(), params, seed };
        w.check()?;
        Ok(w)
    }

    pub fn desk(name: &str) -> Result<Workload, WorkloadError> {
        Workload::new(name, &BTreeMap::new(), Scale::Desk, 0)
    }

    /// Params drawn from the spec's small random ranges.
    pub fn random(name: &str, rng: &mut impl Rng) -> Result<Workload, WorkloadError> {
        let s = spec(name)?;
        let params = s.params.iter().map(|p| (p.name.to_string(), rng.gen_range(p.random.0..=p.random.1))).collect();
        let w = Workload { name: name.into(), params, seed: rng.gen() };
        w.check()?;
        Ok(w)
    }

    pub fn check(&self) -> Result<(), WorkloadError> {
        let s = spec(&self.name)?;
        for p in s.params {
            let v = *self.params.get(p.name).ok_or_else(|| WorkloadError::UnknownParam {
                workload: self.name.clone(),
                param: p.name.into(),
            })?;
            if v < 1 || v > p.max {
                return Err(WorkloadError::Range { param: p.name.into(), value: v, max: p.max });
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> &'static WorkloadSpec {
        spec(&self.name).expect("checked at construction")
    }

    fn p(&self, name: &str) -> i64 {
        self.params[name]
    }

    /// `name=value` pairs joined by `;`, in parameter declaration order.
    pub fn param_set(&self) -> String {
        self.spec().params.iter().map(|p| format!("{}={}", p.name, self.p(p.name))).collect::<Vec<_>>().join(";")
    }

    pub fn program(&self) -> Program {
        parse_program(self.spec().source).expect("shipped workloads parse")
    }

    /// Entry arguments, heap and global contents; deterministic in the seed.
    pub fn input(&self) -> Input {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut init = BTreeMap::new();
        let reals = |rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64| -> Vec<Value> {
            (0..n).map(|_| Value::Real(rng.gen_range(lo..hi))).collect()
        };
        let mut heap = Heap::default();
        let args = match self.name.as_str() {
            "overhead" => {
                init.insert("image".into(), reals(&mut rng, ARRAY_LEN as usize, 0.0, 50.0));
                init.insert("mask1".into(), reals(&mut rng, 10, -1.0, 1.0));
                init.insert("mask2".into(), reals(&mut rng, 10, -1.0, 1.0));
                init.insert("out_lo".into(), vec![Value::Real(1.0e6); ARRAY_LEN as usize]);
                init.insert("out_hi".into(), vec![Value::Real(-1.0e6); ARRAY_LEN as usize]);
                init.insert("maxv".into(), vec![Value::Real(100.0)]);
                vec![Value::Int(self.p("N")), Value::Int(self.p("M"))]
            }
            "fftlike" => {
                init.insert("x".into(), reals(&mut rng, ARRAY_LEN as usize, -1.0, 1.0));
                vec![Value::Int(self.p("iters")), Value::Int(self.p("n"))]
            }
            "deriv" => vec![Value::Int(self.p("N")), Value::Int(self.p("M"))],
            "sphharm" => vec![Value::Int(self.p("iters")), Value::Int(self.p("L"))],
            "linkedlist2" | "linkedlist3" => {
                let (outer, inner) = (self.p("outer") as usize, self.p("inner") as usize);
                let mut subs = Vec::with_capacity(outer);
                for _ in 0..outer {
                    let data: Vec<f64> = (0..inner).map(|_| rng.gen_range(0.0..4.0)).collect();
                    subs.push(heap.push_list(&data, &[]));
                }
                let data: Vec<f64> = (0..outer).map(|_| rng.gen_range(0.5..1.5)).collect();
                vec![Value::Node(heap.push_list(&data, &subs))]
            }
            _ => unreachable!("checked at construction"),
        };
        Input { args, heap: Arc::new(heap), init }
    }
}

/// Parses `a=1,b=2` (or `;`-separated) parameter overrides.
pub fn parse_params(s: &str) -> Result<BTreeMap<String, i64>, WorkloadError> {
    let mut out = BTreeMap::new();
    for part in s.split([',', ';']).map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part.split_once('=').ok_or_else(|| WorkloadError::Syntax(part.into()))?;
        let v: i64 = v.trim().parse().map_err(|_| WorkloadError::Syntax(part.into()))?;
        out.insert(k.trim().to_string(), v);
    }
    Ok(out)
}
