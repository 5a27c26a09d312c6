use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Deserialize;
use serde_json::{json, Value};

use slowwalk::experiment::{
    correlate_with_d, fit_exponent, hit_rates_non_increasing, line_hit_rates, read_csv, run_experiment,
    ExperimentConfig, RunRow,
};
use slowwalk::law::{tilted_increment, verify_boundary_case, LawSpec};
use slowwalk::rw1d::{
    assemble_lambda, estimate_constants, inequality_probe, lambda0, lambda1, probe_catalog, ConstantsSpec,
    Inequality, LambdaSpec, ProbeSpec, Walk1DLaw,
};
use slowwalk::seed::stream;

#[derive(Parser)]
#[command(name = "slowwalk", version, about = "Slow biased random walks on Galton-Watson trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the boundary-case normalisation of an offspring law.
    VerifyLaw {
        /// TOML file with a `law` table; the canonical law when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1_000_000)]
        samples: u64,
        #[arg(long, default_value_t = 3.0)]
        tolerance: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run the replicated heavy-range experiment.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the CSV path of the configuration.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Overrides the JSON metadata path of the configuration.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Estimate c_+, c_-, c_R and check c_R c_+ against sqrt(2 / (pi sigma^2)).
    Constants {
        /// gaussian, gaussian:SIGMA, uniform:SIGMA, smoothed-uniform or rademacher.
        #[arg(long, default_value = "gaussian")]
        law: String,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 1_000_000)]
        replicas: u64,
        #[arg(long, default_value_t = 0.05)]
        tolerance: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Evaluate the catalog of random-walk fluctuation inequalities.
    ProbeInequalities {
        /// Restrict to one catalog entry.
        #[arg(long)]
        entry: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// List the catalog and exit.
        #[arg(long)]
        list: bool,
    },
    /// Fit the heavy-range exponent from a run table.
    Fit {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        theta: f64,
        /// Fail when the slope is below this value.
        #[arg(long)]
        min_slope: Option<f64>,
        /// Fail when the slope is above this value.
        #[arg(long)]
        max_slope: Option<f64>,
    },
    /// Summarise a run table: fits, decomposition shares, D_M correlation
    /// and stopping-line hit rates.
    Report {
        #[arg(long)]
        csv: PathBuf,
        /// Grid size of the D_M correlation; the largest n of the table when omitted.
        #[arg(long)]
        n: Option<u64>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Also compute the quadrature value of Lambda(theta) for each theta.
        #[arg(long)]
        lambda: bool,
        /// Pool size of the Lambda quadrature.
        #[arg(long, default_value_t = 20_000)]
        lambda_pool: usize,
        /// Offspring law for the Lambda quadrature (TOML with a `law` table).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Apply the desk-scale assertions and fail when one does not hold.
        #[arg(long)]
        check: bool,
    },
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct LawFile {
    law: LawSpec,
}

fn load_law(path: Option<&PathBuf>) -> Result<LawSpec> {
    match path {
        None => Ok(LawSpec::Canonical),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let file: LawFile = toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            Ok(file.law)
        }
    }
}

fn parse_walk_law(s: &str) -> Result<Walk1DLaw> {
    let (name, arg) = match s.split_once(':') {
        Some((n, a)) => (n, Some(a.parse::<f64>().with_context(|| format!("bad parameter in {s:?}"))?)),
        None => (s, None),
    };
    let law = match (name, arg) {
        ("gaussian", None) => Walk1DLaw::standard_gaussian(),
        ("gaussian", Some(sigma)) => Walk1DLaw::Gaussian { mean: 0.0, sigma },
        ("uniform", Some(sigma)) => Walk1DLaw::uniform_with_sigma(sigma),
        ("uniform", None) => Walk1DLaw::uniform_with_sigma(1.0),
        ("smoothed-uniform", None) => Walk1DLaw::smoothed_uniform(),
        ("rademacher", None) => Walk1DLaw::Rademacher,
        _ => bail!("unknown increment law {s:?}"),
    };
    law.validate()?;
    Ok(law)
}

fn print(v: &Value) {
    // A closed pipe (e.g. `| head`) is not an error worth reporting.
    let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(v).expect("json"));
}

fn verdict(ok: bool) -> ExitCode {
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn thetas_of(rows: &[RunRow]) -> Vec<f64> {
    let mut t: Vec<f64> = Vec::new();
    for r in rows {
        if !t.contains(&r.theta) {
            t.push(r.theta);
        }
    }
    t.sort_by(f64::total_cmp);
    t
}

fn shares(rows: &[RunRow], theta: f64) -> Vec<Value> {
    let ns: BTreeSet<u64> = rows.iter().filter(|r| r.theta == theta).map(|r| r.n).collect();
    ns.into_iter()
        .map(|n| {
            let sel: Vec<&RunRow> = rows.iter().filter(|r| r.theta == theta && r.n == n).collect();
            let total: usize = sel.iter().map(|r| r.heavy).sum();
            let single: usize = sel.iter().map(|r| r.heavy_single).sum();
            let mean = total as f64 / sel.len() as f64;
            json!({
                "n": n,
                "k": sel[0].k,
                "replicas": sel.len(),
                "mean_heavy": mean,
                "single_share": if total > 0 { single as f64 / total as f64 } else { f64::NAN },
            })
        })
        .collect()
}

fn report(
    rows: &[RunRow],
    n: Option<u64>,
    seed: u64,
    lambda: Option<(LawSpec, usize)>,
    check: bool,
) -> Result<(Value, bool)> {
    let thetas = thetas_of(rows);
    if thetas.is_empty() {
        bail!("empty run table");
    }
    let n_corr = n.unwrap_or_else(|| rows.iter().map(|r| r.n).max().unwrap_or(0));
    let mut ok = true;
    let mut per_theta = Vec::new();
    let mut slopes = Vec::new();
    for &theta in &thetas {
        let fit = fit_exponent(rows, theta).ok();
        slopes.push(fit.as_ref().map(|f| f.slope));
        let corr = correlate_with_d(rows, theta, n_corr, seed).ok();
        if check && theta == 0.5 {
            match &fit {
                Some(f) => ok &= (0.35..=0.65).contains(&f.slope),
                None => ok = false,
            }
            match &corr {
                Some(c) => ok &= c.r > 0.3 && c.permuted_r.abs() <= 3.0 * c.permuted_r_se && !c.degenerate,
                None => ok = false,
            }
        }
        per_theta.push(json!({
            "theta": theta,
            "fit": fit,
            "expected_slope": 1.0 - theta,
            "shares": shares(rows, theta),
            "d_correlation": corr,
        }));
    }
    let ordered = slopes.windows(2).all(|w| matches!((w[0], w[1]), (Some(a), Some(b)) if a > b));
    if check {
        ok &= ordered;
    }
    let rates = line_hit_rates(rows);
    let mut out = json!({
        "rows": rows.len(),
        "threshold_rule": "k = ceil(n^theta)",
        "thetas": per_theta,
        "slopes_decrease_in_theta": ordered,
        "line_hit_rates": rates,
        "line_hit_rates_non_increasing": hit_rates_non_increasing(&rates),
        "note": "the walk statistics are not an estimate of Lambda(theta); the quadrature value is reported separately",
    });
    if let Some((law_spec, pool)) = lambda {
        let law = law_spec.build()?;
        let walk = tilted_increment(&law).context("the law has no closed-form tilted increment")?;
        let spec = LambdaSpec { pool_size: pool, ..LambdaSpec::default() };
        let c = estimate_constants(&walk, &ConstantsSpec { replicas: 200_000, ..Default::default() }, seed)?;
        let mut values = Vec::new();
        for &theta in &thetas {
            let l0 = lambda0(theta, &walk, &spec, seed ^ 0x10)?;
            let l1 = lambda1(theta, &walk, &spec, &c.c_r, &c.c_minus, seed ^ 0x20)?;
            values.push(assemble_lambda(theta, &l0.estimate, l1));
        }
        out["quadrature_lambda"] = json!({ "increment_law": walk.name(), "values": values });
    }
    out["checks_passed"] = json!(ok);
    Ok((out, ok))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::VerifyLaw { config, samples, tolerance, seed } => {
            let law = load_law(config.as_ref())?.build()?;
            let r = verify_boundary_case(&law, samples, tolerance, &mut stream(seed, &[0x7E]))?;
            print(&json!({ "law": law.describe(), "report": r }));
            Ok(verdict(r.pass))
        }
        Command::Simulate { config, csv, json } => {
            let text = fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let mut cfg = ExperimentConfig::from_toml(&text)?;
            if csv.is_some() {
                cfg.csv = csv;
            }
            if json.is_some() {
                cfg.json = json;
            }
            let res = run_experiment(&cfg)?;
            if cfg.csv.is_none() {
                print!("{}", res.csv_string());
            }
            let broken = res
                .rows
                .iter()
                .filter(|r| r.heavy != r.heavy_single + r.heavy_multi)
                .count();
            eprintln!(
                "{} rows, {} failed replicas, {} rows violating the decomposition",
                res.rows.len(),
                res.failures.len(),
                broken
            );
            for f in &res.failures {
                eprintln!("replica {} (seed {}): {}", f.replica, f.seed, f.error);
            }
            Ok(verdict(broken == 0))
        }
        Command::Constants { law, n, replicas, tolerance, seed } => {
            let walk = parse_walk_law(&law)?;
            let spec = ConstantsSpec { n_grid: vec![n], replicas, ..Default::default() };
            let r = estimate_constants(&walk, &spec, seed)?;
            let ok = r.product_rel_error <= tolerance;
            print(&json!({
                "law": r.law,
                "c_plus": r.c_plus,
                "c_minus": r.c_minus,
                "c_r": r.c_r,
                "sigma2": r.sigma2,
                "product": r.product,
                "target": r.product_target,
                "relative_error": r.product_rel_error,
                "tolerance": tolerance,
                "flags": r.flags,
            }));
            Ok(verdict(ok))
        }
        Command::ProbeInequalities { entry, seed, list } => {
            if list {
                for e in Inequality::ALL {
                    let _ = writeln!(std::io::stdout(), "{:<20} {}", e.name(), e.statement());
                }
                return Ok(ExitCode::SUCCESS);
            }
            let mut spec = ProbeSpec::default();
            if let Some(s) = seed {
                spec.seed = s;
            }
            let reports = match entry {
                Some(name) => {
                    let e = Inequality::from_name(&name).with_context(|| format!("unknown entry {name:?}"))?;
                    vec![inequality_probe(e, &spec)?]
                }
                None => probe_catalog(&spec)?,
            };
            let ok = reports.iter().all(|r| r.pass);
            for r in &reports {
                eprintln!(
                    "{} {:<20} slope {}",
                    if r.pass { "ok  " } else { "FAIL" },
                    r.entry,
                    r.trend_slope.map_or("n/a".into(), |s| format!("{s:+.3}"))
                );
            }
            print(&serde_json::to_value(&reports)?);
            Ok(verdict(ok))
        }
        Command::Fit { csv, theta, min_slope, max_slope } => {
            let rows = read_csv(&fs::read_to_string(&csv).with_context(|| format!("reading {}", csv.display()))?)?;
            let fit = fit_exponent(&rows, theta)?;
            let ok = min_slope.is_none_or(|lo| fit.slope >= lo) && max_slope.is_none_or(|hi| fit.slope <= hi);
            print(&serde_json::to_value(&fit)?);
            Ok(verdict(ok))
        }
        Command::Report { csv, n, seed, lambda, lambda_pool, config, check } => {
            let rows = read_csv(&fs::read_to_string(&csv).with_context(|| format!("reading {}", csv.display()))?)?;
            let lam = if lambda { Some((load_law(config.as_ref())?, lambda_pool)) } else { None };
            let (out, ok) = report(&rows, n, seed, lam, check)?;
            print(&out);
            Ok(verdict(ok))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
