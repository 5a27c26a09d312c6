use std::sync::Arc;

use slowwalk::env::{Environment, NodeId};
use slowwalk::law::OffspringLaw;
use slowwalk::observables::PathStatsTable;
use slowwalk::quenched::{
    absorption_solve, check_lower_tail, check_upper_tail, convolve, edge_law, geo_single, geo_sum_distribution,
    geo_sum_mixture, log_geo_sum_tail, log_one_excursion_heavy_prob, single_excursion_law, single_excursion_pmf,
    EdgeLaw,
};

const LN2: f64 = std::f64::consts::LN_2;

fn law_at(vs: &[f64]) -> EdgeLaw {
    let env = Environment::chain(vs).unwrap();
    edge_law(PathStatsTable::build(&env).get(NodeId(vs.len() as u32 - 1)))
}

#[test]
fn chain_edge_laws() {
    let l = law_at(&[0.0, 0.0, 0.0]);
    assert!((l.a - 1.0 / 3.0).abs() < 1e-15 && (l.b - 2.0 / 3.0).abs() < 1e-15);
    let l = law_at(&[0.0, LN2]);
    assert!((l.a - 1.0 / 3.0).abs() < 1e-15 && (l.b - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn path_formula_matches_the_solver_on_small_random_trees() {
    // Finite trees realized to depth 3 (unrealized vertices reflect).
    let law = Arc::new(OffspringLaw::canonical());
    for s in 0..10u64 {
        let mut env = Environment::new(law.clone(), s);
        env.realize_to_depth(3).unwrap();
        let frozen: Vec<(Option<usize>, f64)> = (0..env.len() as u32)
            .map(|i| {
                let x = NodeId(i);
                ((i > 0).then(|| env.parent(x).index()), env.v(x))
            })
            .collect();
        let tree = Environment::from_parents(&frozen).unwrap();
        let ids: Vec<NodeId> = (0..tree.len() as u32).map(NodeId).collect();
        let solved = absorption_solve(&tree, &ids).unwrap();
        let table = PathStatsTable::build(&tree);
        for x in ids {
            assert!((edge_law(table.get(x)).a - solved[&x]).abs() <= 1e-10);
        }
    }
}

#[test]
fn star_root_target() {
    let env = Environment::from_parents(&[(None, 0.0), (Some(0), LN2), (Some(0), LN2)]).unwrap();
    let a = absorption_solve(&env, &[NodeId(1)]).unwrap()[&NodeId(1)];
    assert!((a - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn single_excursion_law_mean_is_e_minus_v() {
    for vs in [vec![0.0, 0.3, -0.5], vec![0.0, 1.0, 2.0, 0.5]] {
        let law = law_at(&vs);
        let mean: f64 = (1..2_000).map(|k| k as f64 * single_excursion_pmf(&law, k)).sum();
        let target = (-vs[vs.len() - 1]).exp();
        assert!((mean - target).abs() < 1e-12 * target.max(1.0), "{mean} vs {target}");
    }
    let l = EdgeLaw::new(1.0 / 3.0, 1.0 / 3.0).unwrap();
    assert!((single_excursion_law(&l, 1) - 1.0 / 3.0).abs() < 1e-15);
    assert!((single_excursion_law(&l, 2) - 1.0 / 9.0).abs() < 1e-15);
}

#[test]
fn large_exponents_stay_finite_in_log_space() {
    let l = EdgeLaw::new(1e-3, 0.5).unwrap();
    let lp = log_one_excursion_heavy_prob(1 << 17, 1 << 12, &l);
    assert!(lp.is_finite() && lp < -700.0, "{lp}");
    let (t, multi) = log_geo_sum_tail(100_000, 1e-4, 0.999, 1 << 14);
    assert!(t.is_finite() && multi.is_finite() && multi <= t);
}

#[test]
fn sums_are_bit_exact_self_convolutions() {
    for (n, a, b) in [(7u64, 0.2, 0.6), (30, 0.05, 0.9), (3, 0.5, 0.0)] {
        let cap = 200;
        let one = geo_sum_distribution(1, a, b, Some(cap)).unwrap();
        assert_eq!(one, geo_single(a, b, cap));
        let mut acc = one.clone();
        for _ in 1..n {
            acc = convolve(&acc, &one);
        }
        let direct = geo_sum_distribution(n, a, b, Some(cap)).unwrap();
        assert_eq!(direct.probs, acc.probs);
        assert_eq!(direct.tail.to_bits(), acc.tail.to_bits());
    }
}

#[test]
fn small_sums() {
    let d = geo_sum_distribution(1, 0.3, 0.4, None).unwrap();
    assert!((d.probs[0] - 0.7).abs() < 1e-15);
    for k in 1..10 {
        let expect = 0.3 * 0.4f64.powi(k as i32 - 1) * 0.6;
        assert!((d.probs[k] - expect).abs() < 1e-15);
    }
    let d = geo_sum_distribution(2, 0.5, 0.5, None).unwrap();
    assert!((1.0 - d.probs[0] - 0.75).abs() < 1e-15);
    assert!(d.tail < 1e-12);
}

#[test]
fn convolution_agrees_with_the_mixture_form() {
    let (n, a, b) = (40u64, 0.1, 0.8);
    let d = geo_sum_distribution(n, a, b, None).unwrap();
    let m = geo_sum_mixture(n, a, b, d.cap()).unwrap();
    for (x, y) in d.probs.iter().zip(&m) {
        assert!((x - y).abs() <= 1e-12);
    }
}

#[test]
fn bound_checks() {
    let c = check_lower_tail(100, 0.01, 0.5, 0.0, 0.5).unwrap();
    assert_eq!(c.holds, Some(true));
    assert!((c.log_p.unwrap().exp() - 0.99f64.powi(100)).abs() < 1e-12);
    let [single, multi] = check_upper_tail(1_000, 1e-3f64.powf(0.9), 1.0 - 1e-3f64.powf(0.2), 1e3f64.sqrt(), 0.5);
    assert!(single.precondition_met && single.value.unwrap() > 0.0);
    assert!(multi.value.unwrap() > 0.0);
    let [bad, _] = check_upper_tail(100, 100f64.powf(-0.7), 1.0 - 100f64.powf(-0.4), 10.0, 0.5);
    assert!(!bad.precondition_met && bad.skip_reason.is_some());
}
