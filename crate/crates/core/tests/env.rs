use std::sync::Arc;

use slowwalk::env::{Environment, NodeId};
use slowwalk::law::{DiscreteAtom, OffspringLaw};
use slowwalk::observables::{path_stats, PathStatsTable};
use slowwalk::seed::stream;
use slowwalk::stats::Summary;
use rand::RngExt;

#[test]
fn one_step_additive_mean_is_one() {
    let law = Arc::new(OffspringLaw::canonical());
    let sums: Vec<f64> = (0..10_000u64)
        .map(|s| {
            let mut env = Environment::new(law.clone(), s);
            let kids = env.realize_children(NodeId::ROOT).unwrap();
            assert_eq!(kids.len(), 2);
            kids.iter().map(|&c| (-env.v(c)).exp()).sum()
        })
        .collect();
    let s = Summary::of(&sums);
    assert!(s.within(1.0, 3.0), "{} +- {}", s.mean, s.se());
}

#[test]
fn random_offspring_generation_three_mean() {
    // N in {1, 3} with equal probability: E[N] = 2.
    let law = OffspringLaw::discrete(vec![
        DiscreteAtom { prob: 0.5, displacements: vec![0.5] },
        DiscreteAtom { prob: 0.5, displacements: vec![1.0, 1.5, 2.0] },
    ])
    .unwrap();
    let law = Arc::new(law);
    let sizes: Vec<f64> = (0..4_000u64)
        .map(|s| Environment::new(law.clone(), s).realize_to_depth(3).unwrap().sizes[3] as f64)
        .collect();
    let s = Summary::of(&sizes);
    assert!(s.within(8.0, 3.0), "{} +- {}", s.mean, s.se());
}

#[test]
fn recursive_h_matches_direct_sum_on_deep_paths() {
    let mut rng = stream(5, &[]);
    let mut v = vec![0.0];
    for _ in 0..1_000 {
        let last = *v.last().unwrap();
        v.push(last + rng.random_range(-0.2..0.2));
    }
    let env = Environment::chain(&v).unwrap();
    let table = PathStatsTable::build(&env);
    for id in [1u32, 10, 100, 500, 1_000] {
        let x = NodeId(id);
        let direct: f64 = v[..=id as usize].iter().map(|y| (y - v[id as usize]).exp()).sum();
        let rec = table.get(x).h;
        assert!((rec - direct).abs() <= 1e-12 * direct, "{id}: {rec} vs {direct}");
        assert!((path_stats(&env, x).unwrap().h - direct).abs() <= 1e-12 * direct);
    }
}

#[test]
fn realize_calls_are_reproducible() {
    let law = Arc::new(OffspringLaw::canonical());
    let build = || {
        let mut env = Environment::new(law.clone(), 31);
        env.realize_to_depth(5).unwrap();
        env.realize_children(NodeId(40)).unwrap();
        (0..env.len() as u32).map(|i| env.v(NodeId(i))).collect::<Vec<_>>()
    };
    assert_eq!(build(), build());
}

#[test]
fn lazy_realization_only_touches_the_visited_region() {
    let law = Arc::new(OffspringLaw::canonical());
    let mut env = Environment::new(law, 3);
    let w = slowwalk::run_n_excursions(&mut env, 200, &mut stream(4, &[]), &Default::default()).unwrap();
    for i in 0..env.len() as u32 {
        let x = NodeId(i);
        if env.is_realized(x) {
            assert!(w.visits_of(x) > 0, "{x} realized without a visit");
        }
        if x != NodeId::ROOT {
            assert!(w.visits_of(env.parent(x)) > 0, "{x} exists but its parent was never visited");
        }
    }
}
