mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use common::*;
use dswp_core::ir::*;

fn opts() -> InterpOptions {
    InterpOptions { trace: true, fuel: 2_000_000 }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, ..ProptestConfig::default() })]

    #[test]
    fn pretty_print_round_trips(seed in any::<u64>()) {
        let src = gen_program(seed, &GenConfig::default());
        let p = parse_program(&src).map_err(|e| TestCaseError::fail(format!("{e}\n{src}")))?;
        prop_assert!(validate(&p).is_empty(), "{:?}\n{}", validate(&p), src);
        let q = parse_program(&p.pretty()).unwrap();
        prop_assert_eq!(&p, &q);
        prop_assert_eq!(p.pretty(), q.pretty());
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, ..ProptestConfig::default() })]

    #[test]
    fn interpretation_is_deterministic(seed in any::<u64>(), iseed in any::<u64>()) {
        let p = parse_program(&gen_program(seed, &GenConfig::default())).unwrap();
        let input = gen_input(iseed);
        let a = interpret(&p, &input, &opts()).unwrap();
        let b = interpret(&p, &input, &opts()).unwrap();
        prop_assert_eq!(a.trace.as_ref().unwrap().len() as u64, a.steps);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn validated_pure_functions_leave_storage_alone(seed in any::<u64>(), iseed in any::<u64>(), k in 0i64..100, x in -5.0f64..5.0) {
        let p = parse_program(&gen_program(seed, &GenConfig::default())).unwrap();
        prop_assert!(p.function("pf").unwrap().pure);
        let input = gen_input(iseed);
        let r = interpret_function(&p, "pf", &[Value::Real(x), Value::Int(k)], &input, &opts()).unwrap();
        for (name, init) in &input.init {
            let now = match &r.outputs[name] {
                Output::Array(v) => v.clone(),
                Output::Scalar(v) => vec![*v],
            };
            prop_assert_eq!(&now, init, "{} changed", name);
        }
    }

    #[test]
    fn loops_match_brute_force_back_edges(seed in any::<u64>(), n in 1usize..=10) {
        let p = parse_program(&gen_cfg(seed, n)).unwrap();
        let f = &p.functions[0];
        let succ = successors(f);
        let reach = reach_avoiding(&succ, 0, None);
        let back = back_edges(&succ);

        // reducible iff the reachable graph without back edges is acyclic
        let forward: Vec<(usize, usize)> = reach
            .iter()
            .flat_map(|&a| succ[a].iter().map(move |&b| (a, b)))
            .filter(|e| !back.contains(e))
            .collect();
        let closure = warshall(n, forward.iter().copied());
        let cyclic = forward.iter().any(|&(a, b)| closure[b][a]);

        match find_loops(f) {
            Err(LoopError::Irreducible { .. }) => prop_assert!(cyclic, "spurious irreducible error"),
            Ok(loops) => {
                prop_assert!(!cyclic, "irreducible graph accepted");
                let mut preds = vec![Vec::new(); n];
                for &a in &reach {
                    for &b in &succ[a] {
                        preds[b].push(a);
                    }
                }
                let mut want: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
                for &(latch, h) in &back {
                    let body = want.entry(h).or_insert_with(|| BTreeSet::from([h]));
                    let mut stack = vec![latch];
                    while let Some(x) = stack.pop() {
                        if body.insert(x) {
                            stack.extend(preds[x].iter().copied());
                        }
                    }
                }
                prop_assert_eq!(loops.len(), want.len());
                for l in &loops {
                    let h = f.block_index(&l.header).unwrap();
                    let body: BTreeSet<usize> = l.body.iter().map(|b| f.block_index(b).unwrap()).collect();
                    prop_assert_eq!(Some(&body), want.get(&h));
                    let depth = want.iter().filter(|(&h2, b2)| h2 != h && b2.contains(&h)).count();
                    prop_assert_eq!(l.depth, depth);
                    let latches: BTreeSet<usize> = back.iter().filter(|e| e.1 == h).map(|e| e.0).collect();
                    let got: BTreeSet<usize> = l.latches.iter().map(|b| f.block_index(b).unwrap()).collect();
                    prop_assert_eq!(got, latches);
                }
            }
        }
    }
}

#[test]
fn straight_line_function_has_no_loops() {
    let p = parse_program("func main() {\nb0:\n  x = 1\n  y = x + 2\n  ret y\n}\n").unwrap();
    assert!(find_loops(&p.functions[0]).unwrap().is_empty());
}

#[test]
fn calc_example_main_has_one_loop_with_a_call() {
    let p = parse_program(dswp_core::bench::CALC_EXAMPLE).unwrap();
    assert_eq!(p.functions.len(), 4);
    assert!(validate(&p).is_empty());
    let loops = find_loops(p.function("main").unwrap()).unwrap();
    assert_eq!(loops.len(), 1);
    assert!(loops[0].contains_call);
    let calc = find_loops(p.function("Calc").unwrap()).unwrap();
    assert_eq!(calc.len(), 1);
    assert!(calc[0].contains_call, "seq and xx are user functions, even if pure");
}

#[test]
fn missing_entry_is_reported() {
    match parse_program("entry main\n") {
        Err(e) => assert!(e.message.contains("entry not found"), "{e}"),
        Ok(p) => assert!(validate(&p).iter().any(|d| d.message.contains("entry not found"))),
    }
}

#[test]
fn calc_example_evaluates_by_hand() {
    // Three nodes with data 2, M = 2 per node in Calc; a[] = [1, 2, 3].
    let p = parse_program(dswp_core::bench::CALC_EXAMPLE).unwrap();
    let mut heap = Heap::default();
    let head = heap.push_list(&[2.0, 2.0, 2.0], &[]);
    let mut init = BTreeMap::new();
    init.insert("a".to_string(), vec![Value::Real(1.0), Value::Real(2.0), Value::Real(3.0)]);
    let input = Input { args: vec![Value::Node(head)], heap: std::sync::Arc::new(heap), init };
    let r = interpret(&p, &input, &opts()).unwrap();

    let (mut m, mut out, mut b) = (0.0f64, 0.0f64, [0.0f64; 2]);
    for da_in in [1.0, 2.0, 3.0] {
        b[0] = 0.0;
        for j in 0..2 {
            let s = j as f64 * 0.5;
            m += da_in + s;
            out += da_in + m.cos();
            b[j] += m.sin() * 0.25;
        }
    }
    let scalar = |o: &Output| match o {
        Output::Scalar(Value::Real(v)) => *v,
        other => panic!("{other:?}"),
    };
    let array = |o: &Output| match o {
        Output::Array(v) => v.iter().map(|x| x.as_real().unwrap()).collect::<Vec<_>>(),
        other => panic!("{other:?}"),
    };
    assert!(close(scalar(&r.outputs["m"]), m, 1e-12));
    assert!(close(array(&r.outputs["out"])[0], out, 1e-12));
    let rb = array(&r.outputs["b"]);
    assert!(close(rb[0], b[0], 1e-12) && close(rb[1], b[1], 1e-12));
}
