use std::sync::Arc;

use slowwalk::env::{Environment, NodeId};
use slowwalk::law::OffspringLaw;
use slowwalk::observables::PathStatsTable;
use slowwalk::quenched::{absorption_solve, edge_law};
use slowwalk::seed::stream;
use slowwalk::stats::{binomial_se, median, Summary};
use slowwalk::walker::{estimate_hitting_probability, run_excursion, run_n_excursions, StepCapPolicy, WalkRecord};

fn policy() -> StepCapPolicy {
    StepCapPolicy::default()
}

/// Root with a two-level side branch: 0 -> 1 -> 3, 0 -> 2.
fn small_tree() -> Environment {
    Environment::from_parents(&[(None, 0.0), (Some(0), 0.7), (Some(0), -0.3), (Some(1), 1.2), (Some(2), 0.4)])
        .unwrap()
}

#[test]
fn leafless_root_gives_forced_excursions() {
    let mut env = Environment::from_parents(&[(None, 0.0)]).unwrap();
    let w = run_n_excursions(&mut env, 3, &mut stream(1, &[]), &policy()).unwrap();
    assert_eq!(w.total_steps, 6);
    assert_eq!(w.local_time_of(NodeId::ROOT), 3);
    assert_eq!(w.visits_of(NodeId::ROOT), 3);
}

#[test]
fn visit_frequency_matches_a_x() {
    let mut env = small_tree();
    let table = PathStatsTable::build(&env);
    let n = 100_000u32;
    let w = run_n_excursions(&mut env, n, &mut stream(2, &[]), &policy()).unwrap();
    for id in 1..5u32 {
        let x = NodeId(id);
        let a = edge_law(table.get(x)).a;
        let p = w.visits_of(x) as f64 / n as f64;
        let se = (a * (1.0 - a) / n as f64).sqrt();
        assert!((p - a).abs() <= 3.0 * se, "node {id}: {p} vs {a}");
    }
}

#[test]
fn mean_single_excursion_local_time_is_e_minus_v() {
    let mut env = small_tree();
    let mut rng = stream(3, &[]);
    let x = NodeId(3);
    let mut walk = WalkRecord::new();
    let mut samples = Vec::with_capacity(100_000);
    for _ in 0..100_000 {
        let before = walk.local_time_of(x);
        run_excursion(&mut env, &mut walk, &mut rng, &policy()).unwrap();
        samples.push((walk.local_time_of(x) - before) as f64);
    }
    let s = Summary::of(&samples);
    assert!(s.within((-1.2f64).exp(), 3.0), "{} +- {}", s.mean, s.se());
}

#[test]
fn binomial_visit_mean_at_one_third() {
    let mut env = Environment::chain(&[0.0, 0.0, 0.0]).unwrap();
    let x = NodeId(2);
    let mut rng = stream(4, &[]);
    let e: Vec<f64> = (0..2_000)
        .map(|_| run_n_excursions(&mut env, 300, &mut rng, &policy()).unwrap().visits_of(x) as f64)
        .collect();
    let s = Summary::of(&e);
    assert!(s.within(100.0, 3.0), "{} +- {}", s.mean, s.se());
}

#[test]
fn hitting_probability_estimates() {
    let mut one = Environment::chain(&[0.0, 0.0]).unwrap();
    let e = estimate_hitting_probability(&mut one, NodeId(1), 40_000, &mut stream(5, &[])).unwrap();
    assert!(e.within(0.5, 3.0), "{e:?}");
    let mut two = Environment::chain(&[0.0, 0.0, 0.0]).unwrap();
    let e = estimate_hitting_probability(&mut two, NodeId(2), 40_000, &mut stream(6, &[])).unwrap();
    assert!(e.within(1.0 / 3.0, 3.0), "{e:?}");

    let mut env = small_tree();
    let exact = absorption_solve(&env, &[NodeId(3), NodeId(4)]).unwrap();
    for (x, a) in exact {
        let e = estimate_hitting_probability(&mut env, x, 40_000, &mut stream(7, &[x.0 as u64])).unwrap();
        assert!(e.within(a, 3.0), "{x}: {e:?} vs {a}");
    }
}

#[test]
fn record_invariants_on_random_environments() {
    let law = Arc::new(OffspringLaw::canonical());
    for r in 0..20u64 {
        let mut env = Environment::new(law.clone(), 100 + r);
        let n = 500;
        let w = run_n_excursions(&mut env, n, &mut stream(8, &[r]), &policy()).unwrap();
        assert_eq!(w.local_time_of(NodeId::ROOT), n as u64);
        assert_eq!(w.down_steps, w.up_steps);
        assert_eq!(w.down_steps + w.up_steps, w.total_steps);
        assert_eq!(w.excursion_lengths.iter().sum::<u64>(), w.total_steps);
        for x in w.visited().collect::<Vec<_>>() {
            let e = w.visits_of(x) as u64;
            assert!(e <= (n as u64).min(w.local_time_of(x)));
            if x != NodeId::ROOT {
                // Visited sets are connected and rooted: the parent was seen at least as often.
                assert!(w.visits_of(x) <= w.visits_of(env.parent(x)));
            }
        }
    }
}

#[test]
fn per_excursion_increments_are_exchangeable() {
    // Compare the first and second halves of the per-excursion local-time
    // increments at a fixed edge.
    let mut env = small_tree();
    let x = NodeId(1);
    let mut rng = stream(9, &[]);
    let mut walk = WalkRecord::new();
    let mut inc = Vec::new();
    for _ in 0..200_000 {
        let before = walk.local_time_of(x);
        run_excursion(&mut env, &mut walk, &mut rng, &policy()).unwrap();
        inc.push((walk.local_time_of(x) - before) as f64);
    }
    let (a, b) = inc.split_at(inc.len() / 2);
    let (sa, sb) = (Summary::of(a), Summary::of(b));
    assert!((sa.mean - sb.mean).abs() <= 3.0 * sa.se().hypot(sb.se()));
    let hits_a = a.iter().filter(|&&v| v > 0.0).count() as u64;
    let hits_b = b.iter().filter(|&&v| v > 0.0).count() as u64;
    let m = a.len() as u64;
    let diff = (hits_a as f64 - hits_b as f64).abs() / m as f64;
    assert!(diff <= 3.0 * binomial_se(hits_a, m).hypot(binomial_se(hits_b, m)));
}

#[test]
fn max_depth_scales_like_log_cubed() {
    let law = Arc::new(OffspringLaw::canonical());
    let mut ratios = Vec::new();
    for e in [10u32, 12, 14] {
        let n = 1u32 << e;
        let depths: Vec<f64> = (0..30u64)
            .map(|r| {
                let mut env = Environment::new(law.clone(), 900 + r);
                let w = run_n_excursions(&mut env, n, &mut stream(10, &[r, e as u64]), &policy()).unwrap();
                w.max_depth as f64
            })
            .collect();
        ratios.push(median(&depths) / (n as f64).ln().powi(3));
    }
    let hi = ratios.iter().cloned().fold(f64::MIN, f64::max);
    let lo = ratios.iter().cloned().fold(f64::MAX, f64::min);
    assert!(lo > 0.0 && hi / lo < 3.0, "{ratios:?}");
}

#[test]
fn same_seed_same_walk() {
    let law = Arc::new(OffspringLaw::canonical());
    let run = || {
        let mut env = Environment::new(law.clone(), 77);
        let w = run_n_excursions(&mut env, 300, &mut stream(11, &[]), &policy()).unwrap();
        (env.len(), w.total_steps, w.local_time.clone())
    };
    assert_eq!(run(), run());
}
