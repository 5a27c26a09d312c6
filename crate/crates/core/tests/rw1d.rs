use slowwalk::law::{tilted_increment, OffspringLaw};
use slowwalk::rw1d::{
    estimate_c0, estimate_cab, estimate_constants, estimate_g, h_infinity_proxy, inequality_probe, lambda0,
    positivity_constant, renewal_function, renewal_slope, simulate_walk, ConstantsSpec, Inequality, LambdaSpec,
    ProbeSpec, Side, Walk1DLaw, TREND_TOLERANCE,
};
use slowwalk::seed::stream;

fn gaussian() -> Walk1DLaw {
    Walk1DLaw::standard_gaussian()
}

fn small_lambda_spec() -> LambdaSpec {
    LambdaSpec { n: 1_000, pool_size: 8_000, ..LambdaSpec::default() }
}

#[test]
fn empty_path_summary() {
    let p = simulate_walk(&gaussian(), 0, &mut stream(1, &[]));
    assert_eq!((p.s, p.max, p.min), (0.0, 0.0, 0.0));
    assert_eq!(p.log_h, 0.0);
}

#[test]
fn gaussian_positivity_is_of_order_one_over_root_n() {
    let c = positivity_constant(&gaussian(), 10_000, 200_000, Side::Plus, &mut stream(2, &[]));
    assert!((0.5..=1.1).contains(&c.value), "{c:?}");
}

#[test]
fn renewal_function_is_linear_on_the_grid() {
    let grid: Vec<f64> = (0..=10).map(|k| 20.0 * k as f64).collect();
    let curve = renewal_function(&gaussian(), &grid, 4_000, &mut stream(3, &[])).unwrap();
    assert_eq!(curve.values[0].value, 1.0);
    for w in curve.values.windows(2) {
        assert!(w[1].value >= w[0].value);
    }
    let ratios: Vec<f64> = grid[1..].iter().zip(&curve.values[1..]).map(|(u, r)| r.value / u).collect();
    let hi = ratios.iter().cloned().fold(f64::MIN, f64::max);
    let lo = ratios.iter().cloned().fold(f64::MAX, f64::min);
    // R(u) / u -> c_R with an O(1/u) offset, so the flatness check starts at u = 60.
    let tail = &ratios[2..];
    let (thi, tlo) = (tail.iter().cloned().fold(f64::MIN, f64::max), tail.iter().cloned().fold(f64::MAX, f64::min));
    assert!((thi - tlo) / tlo < 0.05, "{ratios:?}");
    assert!(hi > lo);
    let slope = renewal_slope(&curve).unwrap();
    assert!(slope.value > 0.0);
}

#[test]
fn tilted_increment_variance() {
    let walk = tilted_increment(&OffspringLaw::canonical()).unwrap();
    let spec = ConstantsSpec { replicas: 100_000, n_grid: vec![1_000], ..Default::default() };
    let r = estimate_constants(&walk, &spec, 4).unwrap();
    let target = 2.0 * std::f64::consts::LN_2;
    assert!((r.sigma2_exact - target).abs() < 1e-12);
    assert!(r.sigma2.within(target, 3.0), "{:?}", r.sigma2);
}

#[test]
fn product_identity_for_a_smoothed_uniform_law() {
    let spec = ConstantsSpec { replicas: 400_000, ..Default::default() };
    let r = estimate_constants(&Walk1DLaw::smoothed_uniform(), &spec, 5).unwrap();
    assert!(r.product_rel_error < 0.08, "{} vs {}", r.product.value, r.product_target);
}

#[test]
fn c0_limits_and_invariance() {
    let g = gaussian();
    let wide = estimate_c0(&g, 50.0, 1.0, 1_000, 20_000, 6).unwrap();
    // Vacuous upper barrier: the meander endpoint density x e^{-x^2/2} at 1.
    let rayleigh = (-0.5f64).exp();
    assert!(wide.within(rayleigh, 3.0), "{wide:?} vs {rayleigh}");
    let narrow = estimate_c0(&g, 0.01, 1.0, 1_000, 20_000, 7).unwrap();
    assert!(narrow.value < 0.05, "{narrow:?}");
    let u = estimate_c0(&Walk1DLaw::uniform_with_sigma(1.0), 1.0, 1.0, 1_000, 20_000, 8).unwrap();
    let gg = estimate_c0(&g, 1.0, 1.0, 1_000, 20_000, 9).unwrap();
    assert!(u.agrees_with(&gg, 3.0), "{u:?} vs {gg:?}");
}

#[test]
fn cab_monotonicity_and_stability() {
    let g = gaussian();
    let far = estimate_cab(&g, 1.0, 50.0, 0.0, 1_000, 10_000, 10).unwrap();
    assert_eq!(far.product.value, 0.0);
    let a1 = estimate_cab(&g, 1.0, 0.5, 0.0, 1_000, 20_000, 11).unwrap().product;
    let a2 = estimate_cab(&g, 2.0, 0.5, 0.0, 1_000, 20_000, 11).unwrap().product;
    // Same pool seed: the events are nested path by path.
    assert!(a2.value >= a1.value - 1e-12);
    let n1 = estimate_cab(&g, 1.0, 0.5, 0.0, 1_000, 20_000, 12).unwrap().product;
    let n4 = estimate_cab(&g, 1.0, 0.5, 0.0, 4_000, 20_000, 13).unwrap().product;
    assert!(n1.agrees_with(&n4, 3.0), "{n1:?} vs {n4:?}");
}

#[test]
fn g_indicator_and_refinement() {
    let g = gaussian();
    let spec = small_lambda_spec();
    assert_eq!(estimate_g(&g, 0.5, 0.7, 16, &spec, 14).unwrap().value, 0.0);
    let coarse = estimate_g(&g, 1.0, 0.5, 16, &spec, 15).unwrap();
    let fine = estimate_g(&g, 1.0, 0.5, 32, &spec, 15).unwrap();
    assert!(coarse.value >= 0.0 && fine.value > 0.0);
    assert!((coarse.value - fine.value).abs() <= coarse.se.hypot(fine.se).max(0.02 * fine.value), "{coarse:?} vs {fine:?}");
}

#[test]
fn lambda0_positive_and_root_n_scaling() {
    let g = gaussian();
    let spec = small_lambda_spec();
    for theta in [0.25, 0.5, 0.75] {
        let l = lambda0(theta, &g, &spec, 16).unwrap().estimate;
        assert!(l.value > 0.0 && l.value.is_finite(), "{l:?}");
    }
    let small = lambda0(0.5, &g, &spec, 17).unwrap().estimate;
    let big = lambda0(0.5, &g, &LambdaSpec { pool_size: 2 * spec.pool_size, ..spec }, 18).unwrap().estimate;
    let ratio = small.se / big.se;
    assert!((ratio / 2f64.sqrt() - 1.0).abs() < 0.3, "se ratio {ratio}");
}

#[test]
fn h_infinity_truncation_is_stable() {
    // The tail over (m, 2m] shrinks like m^{-1/2}, and a horizon of only 2m
    // leaves the end of the path near zero, so n is taken well beyond 2m.
    let (m, m2) = h_infinity_proxy(&gaussian(), 8_000, 80_000, 10_000, 19).unwrap();
    assert!((m.value - m2.value).abs() <= m.se.max(m2.se), "{m:?} vs {m2:?}");
}

#[test]
fn local_window_probe_is_trend_free() {
    let r = inequality_probe(Inequality::from_name("mSSbd").unwrap(), &ProbeSpec::default()).unwrap();
    assert!(r.pass, "{:?}", r.trend_slope);
    assert!(r.trend_slope.unwrap().abs() <= TREND_TOLERANCE);
}
