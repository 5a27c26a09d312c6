use slowwalk::error::Error;
use slowwalk::experiment::{correlate_with_d, fit_exponent, read_csv, run_experiment, ExperimentConfig, CSV_HEADER};

fn tiny(seed: u64) -> ExperimentConfig {
    ExperimentConfig { n_grid: vec![1 << 10], replicas: 1, seed, horizon: 6, ..Default::default() }
}

#[test]
fn header_is_stable() {
    assert_eq!(
        CSV_HEADER,
        "theta,n,k,replica,seed,heavy,heavy_single,heavy_multi,heavy_by_j,d_m,w_m,horizon,tau_n,max_depth,\
depth_cutoff_ok,line_hit,truncated_excursions"
    );
}

#[test]
fn single_replica_rows() {
    let res = run_experiment(&tiny(3)).unwrap();
    assert!(res.failures.is_empty());
    assert_eq!(res.rows.len(), 3);
    for r in &res.rows {
        assert_eq!(r.n, 1 << 10);
        assert_eq!(r.heavy, r.heavy_single + r.heavy_multi);
        assert_eq!(r.heavy, r.heavy_by_j.values().sum::<usize>());
        assert!(r.tau_n >= 2 * r.n);
    }
    let text = res.csv_string();
    assert_eq!(text.lines().next(), Some(CSV_HEADER));
    assert_eq!(read_csv(&text).unwrap(), res.rows);
}

#[test]
fn runs_are_byte_identical_for_a_seed() {
    let a = run_experiment(&tiny(11)).unwrap().csv_string();
    let b = run_experiment(&tiny(11)).unwrap().csv_string();
    let c = run_experiment(&tiny(12)).unwrap().csv_string();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn toml_configs_round_trip() {
    let cfg = ExperimentConfig { a: 9.0, gamma: 9.0, thetas: vec![0.5], ..tiny(5) };
    let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
    assert_eq!(back, cfg);
    assert!(ExperimentConfig::from_toml("thetas = [1.5]").is_err());
    assert!(ExperimentConfig::from_toml("n_grid = [64, 32]").is_err());
}

#[test]
fn analyses_refuse_thin_data() {
    let rows = run_experiment(&tiny(7)).unwrap().rows;
    assert!(matches!(fit_exponent(&rows, 0.5), Err(Error::InsufficientData(_))));
    assert!(matches!(correlate_with_d(&rows, 0.5, 1 << 10, 1), Err(Error::InsufficientData(_))));
}
