//! Communication cost calibration: a channel ping-pong measured against the
//! interpreter's speed on a kernel of known model cost.

use std::sync::atomic::AtomicBool;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::ir::{interpret, parse_program, Input, InterpOptions};
use crate::partition::{estimate_loop_cost, LatencyModel, DEFAULT_COMM_COST};
use crate::queue::{self, Control, Dequeued};
use crate::runtime::median;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrateConfig {
    pub elements: usize,
    pub capacity: usize,
    pub rounds: usize,
    pub model: LatencyModel,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        CalibrateConfig { elements: 100_000, capacity: queue::DEFAULT_CAPACITY, rounds: 5, model: LatencyModel::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Median round trip per element.
    pub ns_per_element: f64,
    pub ns_per_cycle: f64,
    /// Round trip expressed in model cycles; what profitability uses.
    pub comm_cost: f64,
    pub round_trips_ns: Vec<f64>,
    pub warning: Option<String>,
}

/// Bounces `elements` integers between two threads, one in flight at a time.
pub fn ping_pong(elements: usize, capacity: usize) -> Duration {
    let (mut tx, mut rx_b) = queue::channel::<u64>(capacity).expect("capacity >= 2");
    let (mut tx_b, mut rx) = queue::channel::<u64>(capacity).expect("capacity >= 2");
    let abort = AtomicBool::new(false);
    let ctl = Control { abort: &abort, timeout: Duration::from_secs(60) };
    std::thread::scope(|s| {
        s.spawn(move || {
            while let Ok(Dequeued::Item(x)) = rx_b.dequeue(ctl) {
                if tx_b.enqueue(x + 1, ctl).is_err() {
                    break;
                }
            }
        });
        let t0 = Instant::now();
        for i in 0..elements as u64 {
            tx.enqueue(i, ctl).expect("echo thread alive");
            match rx.dequeue(ctl) {
                Ok(Dequeued::Item(y)) => assert_eq!(y, i + 1),
                _ => panic!("echo thread stopped"),
            }
        }
        let t = t0.elapsed();
        tx.close();
        t
    })
}

const KERNEL: &str = "entry main
func main() {
start:
  i = 0
  x = 0.5
  jump head
head:
  c = i < 200000
  br c body exit
body:
  y = x * 1.0001
  z = y + 0.25
  x = z - 0.25
  i = i + 1
  jump head
exit:
  ret x
}
";

/// Wall time per model cycle of the interpreter.
pub fn interpreter_ns_per_cycle(m: &LatencyModel) -> f64 {
    let p = parse_program(KERNEL).expect("kernel parses");
    let f = p.function("main").unwrap();
    let l = crate::ir::find_loops(f).unwrap().remove(0);
    let cycles = estimate_loop_cost(&l, &p, m) as f64;
    let mut times = Vec::new();
    for _ in 0..3 {
        let t0 = Instant::now();
        interpret(&p, &Input::default(), &InterpOptions::default()).expect("kernel runs");
        times.push(t0.elapsed().as_nanos() as f64);
    }
    median(&times) / cycles
}

pub fn calibrate(cfg: &CalibrateConfig) -> Calibration {
    let rounds = cfg.rounds.max(1);
    let elements = cfg.elements.max(1);
    let mut rts = Vec::new();
    for _ in 0..rounds {
        rts.push(ping_pong(elements, cfg.capacity).as_nanos() as f64 / elements as f64);
    }
    let ns_per_element = median(&rts);
    let ns_per_cycle = interpreter_ns_per_cycle(&cfg.model);
    let mut warning = None;
    let comm_cost = if !(ns_per_element > 0.0 && ns_per_cycle > 0.0 && ns_per_cycle.is_finite()) {
        warning = Some(format!("timer too coarse; using {DEFAULT_COMM_COST} cycles"));
        DEFAULT_COMM_COST
    } else {
        (ns_per_element / ns_per_cycle).max(1.0)
    };
    Calibration { ns_per_element, ns_per_cycle, comm_cost, round_trips_ns: rts, warning }
}

/// Coefficient of variation (population standard deviation over mean).
pub fn coefficient_of_variation(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if mean == 0.0 {
        0.0
    } else {
        var.sqrt() / mean
    }
}
