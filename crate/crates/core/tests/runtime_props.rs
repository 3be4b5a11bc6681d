mod common;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;
use dswp_core::bench::{Workload, CALC_EXAMPLE, WORKLOADS};
use dswp_core::ir::{parse_program, Heap, Input, Output, Value};
use dswp_core::partition::{Direction, PlanMode};
use dswp_core::runtime::*;

fn cfg(mode: Mode) -> RunConfig {
    RunConfig { mode, ..RunConfig::default() }
}

#[test]
fn generated_programs_run_like_the_interpreter() {
    let gen = GenConfig { main_loop: true, max_stmts: 4, ..GenConfig::default() };
    let mut pipelined = 0;
    for seed in 0..150u64 {
        let p = parse_program(&gen_program(seed, &gen)).unwrap();
        for k in 0..3u64 {
            let input = gen_input(seed * 31 + k);
            for mode in Mode::ALL {
                for workers in [2, 4].into_iter().filter(|&w| w >= mode.min_workers()) {
                    match check_against_interpreter(&p, &input, mode, workers, 1e-12) {
                        Ok(Some(w)) if w > 1 => pipelined += 1,
                        Ok(_) => {}
                        Err(e) => panic!("seed {seed} input {k} workers {workers}: {e}\n{}", p.pretty()),
                    }
                }
            }
        }
    }
    assert!(pipelined > 300, "only {pipelined} pipelined runs");
}

#[test]
fn workloads_run_like_the_interpreter_on_random_params() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for spec in &WORKLOADS {
        for _ in 0..4 {
            let w = Workload::random(spec.name, &mut rng).unwrap();
            for mode in Mode::ALL {
                let got = check_against_interpreter(&w.program(), &w.input(), mode, 4, 1e-9);
                assert!(matches!(got, Ok(Some(_))), "{} {}: {got:?}", w.name, w.param_set());
            }
        }
    }
}

fn calc_input(nodes: usize) -> Input {
    let mut heap = Heap::default();
    let data: Vec<f64> = (0..nodes).map(|k| 1.0 + k as f64 * 0.1).collect();
    let head = heap.push_list(&data, &[]);
    let mut init = BTreeMap::new();
    init.insert("a".to_string(), (0..8).map(|k| Value::Real(k as f64)).collect());
    Input { args: vec![Value::Node(head)], heap: std::sync::Arc::new(heap), init }
}

#[test]
fn calc_example_pipelines_and_matches() {
    let p = parse_program(CALC_EXAMPLE).unwrap();
    let input = calc_input(50);
    let (seq, _) = execute(&p, &input, &cfg(Mode::Sequential)).unwrap();
    let (dswp, plan) = execute(&p, &input, &cfg(Mode::Dswp)).unwrap();
    assert_eq!(plan.unwrap().mode, PlanMode::Dswp);
    assert_eq!(dswp.worker_count, 2);
    let (sliced, plan) = execute(&p, &input, &cfg(Mode::DswpSlice)).unwrap();
    let names: Vec<String> = plan.unwrap().workers.into_iter().map(|w| w.name).collect();
    assert_eq!(names, ["L", "S1", "S2"]);
    assert!(verify_equivalence(&seq, &dswp, 0.0));
    assert!(verify_equivalence(&seq, &sliced, 0.0));
    assert_eq!(seq.items_processed, 50);
}

#[test]
fn returning_callee_gets_a_return_channel() {
    let w = Workload::new("linkedlist3", &[("outer".to_string(), 5), ("inner".to_string(), 20)].into(), dswp_core::bench::Scale::Desk, 3).unwrap();
    let (r, plan) = execute(&w.program(), &w.input(), &cfg(Mode::DswpSlice)).unwrap();
    let plan = plan.unwrap();
    assert_eq!(plan.mode, PlanMode::DswpSlice);
    assert_eq!(plan.channels.len(), 4, "{}", plan.report());
    assert!(plan.channels.iter().any(|c| c.direction == Direction::Return));
    check_plan(&plan).unwrap();
    assert_eq!(r.items_processed, 5);
}

#[test]
fn channel_traffic_is_conserved() {
    for spec in &WORKLOADS {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = Workload::random(spec.name, &mut rng).unwrap();
        for mode in [Mode::Dswp, Mode::DswpSlice] {
            let (r, _) = execute(&w.program(), &w.input(), &cfg(mode)).unwrap();
            for c in &r.channel_stats {
                assert_eq!(c.enqueues, c.dequeues, "{} {}", w.name, c.name);
                assert_eq!(c.enqueues, r.items_processed, "{} {}", w.name, c.name);
            }
            assert_eq!(r.worker_items.len(), r.worker_count);
            for (name, n) in &r.worker_items {
                assert_eq!(*n, r.items_processed, "{} {name}", w.name);
            }
        }
    }
}

#[test]
fn repetitions_are_timed_separately() {
    let p = parse_program(CALC_EXAMPLE).unwrap();
    let c = RunConfig { repetitions: 5, ..cfg(Mode::DswpSlice) };
    let (r, _) = execute(&p, &calc_input(10), &c).unwrap();
    assert_eq!(r.wall_times.len(), 5);
    let mut t = r.wall_times.clone();
    t.sort_by(f64::total_cmp);
    assert_eq!(r.median_time, t[2]);
    assert!(t.iter().all(|&x| x > 0.0));
}

#[test]
fn perturbed_output_fails_verification() {
    let p = parse_program(CALC_EXAMPLE).unwrap();
    let input = calc_input(10);
    let (a, _) = execute(&p, &input, &cfg(Mode::Sequential)).unwrap();
    let mut b = a.clone();
    match b.outputs.get_mut("m").unwrap() {
        Output::Scalar(Value::Real(x)) => *x += 1e-3,
        other => panic!("{other:?}"),
    }
    assert!(verify_equivalence(&a, &a.clone(), 1e-9));
    assert!(!verify_equivalence(&a, &b, 1e-9));
    assert_eq!(output_diffs(&a.outputs, &b.outputs, 1e-9).len(), 1);
}

const FAILING: &str = "global real g[4]
func main(n: int) {
b0:
  i = 0
  jump h
h:
  c = i < n
  br c body exit
body:
  z = 5 - i
  r = call f(z)
  k = i % 4
  g[k] = r
  i = i + 1
  jump h
exit:
  ret
}
func f(z: int) {
b0:
  q = 10 / z
  t = call toreal(q)
  t = call sin(t)
  t = call sin(t)
  t = call sin(t)
  t = call sin(t)
  ret t
}
";

const FAILING_LATE: &str = "global real g[4]
func main(n: int) {
b0:
  i = 0
  jump h
h:
  c = i < n
  br c body exit
body:
  r = call f(i)
  y = r * 0.0
  w = 1.0 / y
  k = i % 4
  g[k] = w
  i = i + 1
  jump h
exit:
  ret
}
func f(i: int) {
b0:
  t = call toreal(i)
  t = call sin(t)
  t = call sin(t)
  ret t
}
";

#[test]
fn worker_errors_name_the_worker() {
    let p = parse_program(FAILING).unwrap();
    let input = Input { args: vec![Value::Int(10)], ..Input::default() };
    assert!(matches!(execute(&p, &input, &cfg(Mode::Sequential)), Err(RunError::Interp(_))));
    for mode in [Mode::Dswp, Mode::DswpSlice] {
        match execute(&p, &input, &cfg(mode)) {
            Err(RunError::Worker { worker, message }) => {
                assert_eq!(worker, "L", "{message}");
                assert!(message.contains("zero"), "{message}");
            }
            other => panic!("{mode:?}: {other:?}"),
        }
    }
    // the same fault in a downstream stage
    let q = parse_program(FAILING_LATE).unwrap();
    for mode in [Mode::Dswp, Mode::DswpSlice] {
        match execute(&q, &input, &cfg(mode)) {
            Err(RunError::Worker { worker, message }) => {
                assert_ne!(worker, "L", "{message}");
                assert!(message.contains("zero"), "{message}");
            }
            other => panic!("{mode:?}: {other:?}"),
        }
    }
    // fewer iterations never reach the division by zero
    let ok = Input { args: vec![Value::Int(5)], ..Input::default() };
    for mode in Mode::ALL {
        assert!(check_against_interpreter(&p, &ok, mode, 4, 0.0).unwrap().is_some());
    }
}

#[test]
fn bad_configurations_are_rejected() {
    let p = parse_program(CALC_EXAMPLE).unwrap();
    let input = calc_input(3);
    for c in [
        RunConfig { queue_capacity: 1, ..RunConfig::default() },
        RunConfig { repetitions: 0, ..RunConfig::default() },
        RunConfig { mode: Mode::Dswp, workers: 1, ..RunConfig::default() },
    ] {
        assert!(matches!(execute(&p, &input, &c), Err(RunError::Config(_))), "{c:?}");
    }
}

#[test]
fn odd_capacities_still_run() {
    let p = parse_program(CALC_EXAMPLE).unwrap();
    let input = calc_input(40);
    let (want, _) = execute(&p, &input, &cfg(Mode::Sequential)).unwrap();
    for cap in [2, 3, 5, 100] {
        let (r, _) = execute(&p, &input, &RunConfig { queue_capacity: cap, ..cfg(Mode::DswpSlice) }).unwrap();
        assert!(verify_equivalence(&want, &r, 0.0), "capacity {cap}");
    }
}
