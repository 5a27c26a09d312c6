use slowwalk::law::{DiscreteAtom, OffspringLaw};
use slowwalk::seed::stream;
use slowwalk::spine::{
    many_to_one_check, sample_spine_path, sample_spine_tree, spine_marginal_check, PathFunctional, TiltedLaw,
};
use slowwalk::stats::{ks_two_sample, Summary};
use rand_distr::{Distribution, Normal};

const LN2: f64 = std::f64::consts::LN_2;

#[test]
fn zero_depth_tree_is_the_root() {
    let t = sample_spine_tree(&OffspringLaw::canonical(), 0, &mut stream(1, &[])).unwrap();
    assert_eq!(t.nodes.len(), 1);
    assert_eq!(t.spine, vec![0]);
}

#[test]
fn first_spine_step_is_a_centred_gaussian() {
    let law = OffspringLaw::canonical();
    let tilt = TiltedLaw::for_law(&law);
    let mut rng = stream(2, &[]);
    let spine: Vec<f64> = (0..100_000).map(|_| sample_spine_path(&law, &tilt, 1, &mut rng).unwrap()[0]).collect();
    let normal = Normal::new(0.0, (2.0 * LN2).sqrt()).unwrap();
    let direct: Vec<f64> = (0..100_000).map(|_| normal.sample(&mut rng)).collect();
    let ks = ks_two_sample(&spine, &direct);
    assert!(ks.statistic < 0.01, "{ks:?}");
}

#[test]
fn spine_choice_is_proportional_to_e_minus_v() {
    let law = OffspringLaw::canonical();
    let mut rng = stream(3, &[]);
    // Bin families by the predicted probability that child 0 carries the spine.
    let bins = 5;
    let mut hits = vec![Vec::new(); bins];
    let mut pred = vec![Vec::new(); bins];
    for _ in 0..100_000 {
        let t = sample_spine_tree(&law, 1, &mut rng).unwrap();
        let kids = t.generation(1);
        let w: Vec<f64> = kids.iter().map(|&i| (-t.nodes[i].v).exp()).collect();
        let p = w[0] / w.iter().sum::<f64>();
        let b = ((p * bins as f64) as usize).min(bins - 1);
        hits[b].push(f64::from(t.spine[1] == kids[0]));
        pred[b].push(p);
    }
    for b in 0..bins {
        let h = Summary::of(&hits[b]);
        let p = Summary::of(&pred[b]).mean;
        assert!(h.within(p, 3.0), "bin {b}: {} +- {} vs {p}", h.mean, h.se());
    }
}

#[test]
fn side_subtrees_branch_under_the_original_law() {
    // N is 1 or 3 with equal probability, so E[N] = 2.
    let law = OffspringLaw::discrete(vec![
        DiscreteAtom { prob: 0.5, displacements: vec![LN2] },
        DiscreteAtom { prob: 0.5, displacements: vec![LN2, LN2, LN2] },
    ])
    .unwrap();
    let mut rng = stream(4, &[]);
    let mut kids = Vec::new();
    for _ in 0..3_000 {
        let t = sample_spine_tree(&law, 4, &mut rng).unwrap();
        let on_spine: Vec<bool> = (0..t.nodes.len()).map(|i| t.spine.contains(&i)).collect();
        let mut count = vec![0usize; t.nodes.len()];
        for n in &t.nodes {
            if let Some(p) = n.parent {
                count[p] += 1;
            }
        }
        for (i, n) in t.nodes.iter().enumerate() {
            if !on_spine[i] && n.depth < 4 {
                kids.push(count[i] as f64);
            }
        }
        for sib in t.siblings.iter().flatten() {
            assert!(!on_spine[*sib]);
            assert_eq!(t.subtree_sizes(*sib)[0], 1);
        }
    }
    let s = Summary::of(&kids);
    assert!(s.within(2.0, 3.0), "{} +- {}", s.mean, s.se());
}

#[test]
fn discrete_marginal_uses_an_exact_chi_square() {
    let law = OffspringLaw::discrete(vec![DiscreteAtom { prob: 1.0, displacements: vec![0.0, 2.0] }]).unwrap();
    let r = spine_marginal_check(&law, 3, 50_000, 5).unwrap();
    assert!(r.test.contains("chi"), "{}", r.test);
    assert!(r.pass, "{r:?}");
}

#[test]
fn many_to_one_basic_cases() {
    let law = OffspringLaw::canonical();
    let fs = vec![
        PathFunctional::new("one", |_| 1.0),
        PathFunctional::new("end-nonpositive", |p| f64::from(*p.last().unwrap() <= 0.0)),
    ];
    let samples = 100_000;
    let r = many_to_one_check(&law, 4, &fs, samples, 6).unwrap();
    assert!((r[0].rhs - 1.0).abs() < 1e-12);
    // W_m is heavy-tailed, so judge it against its exact variance
    // 1.5 (2^m - 1) rather than the sample one.
    let se = (1.5 * 15.0 / samples as f64).sqrt();
    assert!((r[0].lhs - 1.0).abs() <= 3.0 * se, "{} +- {se}", r[0].lhs);
    assert!((r[1].rhs - 0.5).abs() <= 3.0 * r[1].rhs_se.max(1e-3));
    assert!((r[1].lhs - 0.5).abs() <= 3.0 * r[1].lhs_se.hypot(r[1].rhs_se));
}
