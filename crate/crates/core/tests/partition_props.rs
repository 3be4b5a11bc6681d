mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use dswp_core::ir::parse_program;
use dswp_core::partition::*;
use dswp_core::scc::{build_dagscc, compute_sccs, tarjan};

#[test]
fn sccs_match_mutual_reachability() {
    for seed in 0..500u64 {
        let g = random_pdg(seed);
        check_scc(&g).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
    }
}

proptest! {
    #[test]
    fn tarjan_partitions_plain_adjacency(n in 1usize..=12, edges in proptest::collection::vec((0usize..12, 0usize..12), 0..40)) {
        let mut adj = vec![Vec::new(); n];
        let edges: Vec<(usize, usize)> = edges.into_iter().filter(|&(a, b)| a < n && b < n).collect();
        for &(a, b) in &edges {
            adj[a].push(b);
        }
        let r = warshall(n, edges.iter().copied());
        let comps = tarjan(&adj);
        let mut all: Vec<usize> = comps.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        for c in &comps {
            for &a in c {
                let want: BTreeSet<usize> = (0..n).filter(|&b| r[a][b] && r[b][a]).collect();
                prop_assert_eq!(c.iter().copied().collect::<BTreeSet<_>>(), want);
            }
        }
    }

    #[test]
    fn stage_assignment_is_legal(seed in any::<u64>(), k in 1usize..6) {
        let g = random_pdg(seed);
        let mut d = build_dagscc(&g, compute_sccs(&g), &|id| 1 + id.index() as u64 % 7);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for c in &mut d.components {
            c.contains_call = rng.gen_bool(0.3);
        }
        let first: BTreeSet<usize> = (0..d.components.len()).filter(|_| rng.gen_bool(0.15)).collect();
        for sp in [assign_stages(&d, k), assign_stages_with(&d, k, &first)] {
            prop_assert!(sp.is_legal(&d));
            prop_assert!(sp.stages.len() <= k && !sp.stages.is_empty());
            prop_assert_eq!(sp.degenerate, sp.stages.len() < 2);
            let mut all: Vec<usize> = sp.stages.iter().flat_map(|s| s.components.iter().copied()).collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..d.components.len()).collect::<Vec<_>>());
            for s in &sp.stages {
                prop_assert_eq!(s.latency, s.components.iter().map(|&c| d.components[c].latency).sum::<u64>());
            }
        }
        let sp = assign_stages_with(&d, k, &first);
        let of = sp.stage_of();
        for &c in &first {
            prop_assert_eq!(of[&c], 0);
            for a in d.ancestors(c) {
                prop_assert_eq!(of[&a], 0);
            }
        }
        // recurrences that no call feeds stay in stage 0
        let below: BTreeSet<usize> = d.components.iter().filter(|c| c.contains_call).flat_map(|c| {
            let mut s = d.descendants(c.id);
            s.insert(c.id);
            s
        }).collect();
        for c in d.components.iter().filter(|c| c.carries_recurrence && !below.contains(&c.id)) {
            prop_assert_eq!(of[&c.id], 0);
        }
    }
}

fn loop_config() -> GenConfig {
    GenConfig { main_loop: true, max_stmts: 4, ..GenConfig::default() }
}

#[test]
fn plans_on_generated_programs_are_well_formed() {
    let mut planned = 0;
    let mut pipelined = 0;
    for seed in 0..300u64 {
        let p = parse_program(&gen_program(seed, &loop_config())).unwrap();
        for slice in [SliceMode::Off, SliceMode::On, SliceMode::Auto] {
            for max_workers in [1, 2, 4] {
                let cfg = PlanConfig { slice, max_workers, ..PlanConfig::default() };
                let plan = match plan_dswp_slice(&p, &cfg) {
                    Ok(plan) => plan,
                    Err(PlanError::Cost(CostError::NoCandidate(_))) => continue,
                    Err(e) => panic!("seed {seed}: {e}"),
                };
                planned += 1;
                if plan.worker_count > 1 {
                    pipelined += 1;
                }
                assert!(plan.worker_count <= max_workers.max(1) + 2 || plan.mode == PlanMode::DswpSlice, "seed {seed}");
                if slice == SliceMode::Off {
                    assert_ne!(plan.mode, PlanMode::DswpSlice);
                }
                check_plan(&plan).unwrap_or_else(|e| panic!("seed {seed} {slice:?} {max_workers}: {e}\n{}", plan.report()));
                let back: PipelinePlan = serde_json::from_str(&serde_json::to_string(&plan).unwrap()).unwrap();
                assert_eq!(back, plan);
            }
        }
    }
    assert!(planned > 300 && pipelined > 100, "planned {planned}, pipelined {pipelined}");
}

fn two_loops(na: u32, nb: u32, ca: u32, cb: u32) -> String {
    let body = |k: u32| "  y = call sin(y)\n".repeat(k as usize);
    format!(
        "global real g[1]
func main() {{
b0:
  i = 0
  jump ha
ha:
  c = i < {na}
  br c ba mid
ba:
  r = call fa(i)
  g[0] = r
  i = i + 1
  jump ha
mid:
  j = 0
  jump hb
hb:
  d = j < {nb}
  br d bb done
bb:
  s = call fb(j)
  g[0] = s
  j = j + 1
  jump hb
done:
  ret
}}
func fa(k: int) pure {{
b0:
  y = call toreal(k)
{}  ret y
}}
func fb(k: int) pure {{
b0:
  y = call toreal(k)
{}  ret y
}}
",
        body(ca),
        body(cb)
    )
}

proptest! {
    #[test]
    fn raising_the_chosen_loops_trip_count_keeps_it_chosen(
        na in 1u32..200, nb in 1u32..200, ca in 0u32..6, cb in 0u32..6, extra in 1u32..500
    ) {
        let m = LatencyModel::default();
        let p = parse_program(&two_loops(na, nb, ca, cb)).unwrap();
        let (l, _) = select_candidate_loop(&p, &m).unwrap();
        let q = if l.header == "ha" {
            two_loops(na + extra, nb, ca, cb)
        } else {
            two_loops(na, nb + extra, ca, cb)
        };
        let (l2, _) = select_candidate_loop(&parse_program(&q).unwrap(), &m).unwrap();
        prop_assert_eq!(&l2.header, &l.header);
        // the chosen loop is the costliest one
        let ea = estimate_loop_cost(&dswp_core::ir::find_loops(&p.functions[0]).unwrap()[0], &p, &m);
        let eb = estimate_loop_cost(&dswp_core::ir::find_loops(&p.functions[0]).unwrap()[1], &p, &m);
        prop_assert_eq!(l.header == "ha", ea >= eb);
    }
}

#[test]
fn loop_without_calls_is_not_a_candidate() {
    let p = parse_program("func main() {\nb0:\n  i = 0\n  jump h\nh:\n  c = i < 10\n  br c body exit\nbody:\n  i = i + 1\n  jump h\nexit:\n  ret\n}\n").unwrap();
    assert!(matches!(select_candidate_loop(&p, &LatencyModel::default()), Err(CostError::NoCandidate(_))));
}

#[test]
fn calc_plans_have_the_expected_shape() {
    let p = parse_program(dswp_core::bench::CALC_EXAMPLE).unwrap();
    let dswp = plan_dswp_slice(&p, &PlanConfig { slice: SliceMode::Off, ..PlanConfig::default() }).unwrap();
    assert_eq!(dswp.mode, PlanMode::Dswp);
    assert_eq!(dswp.worker_count, 2);
    let sliced = plan_dswp_slice(&p, &PlanConfig::default()).unwrap();
    assert_eq!(sliced.mode, PlanMode::DswpSlice);
    let names: Vec<&str> = sliced.workers.iter().map(|w| w.name.as_str()).collect();
    assert_eq!(names, ["L", "S1", "S2"]);
    for plan in [&dswp, &sliced] {
        check_plan(plan).unwrap();
    }
}
