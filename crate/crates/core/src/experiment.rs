//! Replicated heavy-range runs: configuration, per-replica walks with
//! checkpoints along an `n` grid, tabular output and the fits made from
//! the table.
//!
//! Each replica grows one environment and runs one walk; every checkpoint
//! `n` and every `theta` is read off that same walk, and `D_M`, `W_M` are
//! computed once on the environment after the last checkpoint.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{Environment, DEFAULT_POPULATION_CAP};
use crate::error::{Error, Result};
use crate::law::{LawSpec, OffspringLaw};
use crate::observables::{
    generation_cutoff, heavy_range_by_excursions, martingale_streaming, stopping_line_hit, threshold,
    PathStatsTable, DEFAULT_A, DEFAULT_C0, DEFAULT_GAMMA, DEFAULT_HORIZON,
};
use crate::seed::{stream, stream_seed};
use crate::stats::{jackknife, linear_fit, pearson, wilson_interval};
use crate::walker::{run_excursion, StepCapPolicy, WalkRecord};

/// Header of the run table. Changing it is a format change.
pub const CSV_HEADER: &str = "theta,n,k,replica,seed,heavy,heavy_single,heavy_multi,heavy_by_j,\
d_m,w_m,horizon,tau_n,max_depth,depth_cutoff_ok,line_hit,truncated_excursions";

fn default_thetas() -> Vec<f64> {
    vec![0.25, 0.5, 0.75]
}

fn default_n_grid() -> Vec<u64> {
    (10..=17).map(|e| 1u64 << e).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub law: LawSpec,
    pub thetas: Vec<f64>,
    pub n_grid: Vec<u64>,
    pub replicas: usize,
    pub seed: u64,
    pub caps: StepCapPolicy,
    pub population_cap: usize,
    /// Horizon `M` of `D_M` and `W_M`; 0 skips the martingales.
    pub horizon: u32,
    pub a: f64,
    pub gamma: f64,
    pub c0: f64,
    pub csv: Option<PathBuf>,
    pub json: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            law: LawSpec::Canonical,
            thetas: default_thetas(),
            n_grid: default_n_grid(),
            replicas: 50,
            seed: 0x51_0e,
            caps: StepCapPolicy::default(),
            population_cap: DEFAULT_POPULATION_CAP,
            horizon: DEFAULT_HORIZON,
            a: DEFAULT_A,
            gamma: DEFAULT_GAMMA,
            c0: DEFAULT_C0,
            csv: None,
            json: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.thetas.is_empty() || self.thetas.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(Error::InvalidArgument("every theta must lie in (0,1)".into()));
        }
        if self.n_grid.is_empty() || self.n_grid[0] == 0 || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("n grid must be non-empty, positive and ascending".into()));
        }
        if self.n_grid.last().copied().unwrap_or(0) > u32::MAX as u64 {
            return Err(Error::InvalidArgument("n grid exceeds u32 excursions".into()));
        }
        if self.replicas == 0 {
            return Err(Error::InvalidArgument("need at least one replica".into()));
        }
        self.caps.validate()
    }
}

/// One `(theta, n, replica)` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub theta: f64,
    pub n: u64,
    pub k: u64,
    pub replica: usize,
    pub seed: u64,
    pub heavy: usize,
    pub heavy_single: usize,
    pub heavy_multi: usize,
    pub heavy_by_j: BTreeMap<u32, usize>,
    pub d_m: f64,
    pub w_m: f64,
    pub horizon: u32,
    pub tau_n: u64,
    pub max_depth: u32,
    pub depth_cutoff_ok: bool,
    /// Some visited vertex lies on the stopping line at level `n`.
    pub line_hit: bool,
    pub truncated_excursions: u32,
}

impl RunRow {
    fn histogram(&self) -> String {
        self.heavy_by_j
            .iter()
            .map(|(j, c)| format!("{j}:{c}"))
            .collect::<Vec<_>>()
            .join(";")
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.theta,
            self.n,
            self.k,
            self.replica,
            self.seed,
            self.heavy,
            self.heavy_single,
            self.heavy_multi,
            self.histogram(),
            self.d_m,
            self.w_m,
            self.horizon,
            self.tau_n,
            self.max_depth,
            self.depth_cutoff_ok,
            self.line_hit,
            self.truncated_excursions
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaFailure {
    pub replica: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: ExperimentConfig,
    pub rows: Vec<RunRow>,
    pub failures: Vec<ReplicaFailure>,
}

impl RunResult {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(out, "{}", r.csv_line())?;
        }
        Ok(())
    }

    pub fn csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("utf-8")
    }

    /// Run metadata: configuration, threshold rule and failures.
    pub fn metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "crate_version": env!("CARGO_PKG_VERSION"),
            "config": self.config,
            "threshold_rule": "k = ceil(n^theta)",
            "rows": self.rows.len(),
            "failures": self.failures,
        })
    }

    /// Rows at one `(theta, n)`, in replica order.
    pub fn select(&self, theta: f64, n: u64) -> Vec<&RunRow> {
        self.rows.iter().filter(|r| r.theta == theta && r.n == n).collect()
    }
}

/// Seeds of replica `r`: environment stream and walk stream.
pub fn replica_seeds(base: u64, r: usize) -> (u64, u64) {
    (stream_seed(base, &[0xE1, r as u64]), stream_seed(base, &[0xE2, r as u64]))
}

/// Runs one replica through the whole grid.
pub fn run_replica(cfg: &ExperimentConfig, law: &Arc<OffspringLaw>, r: usize) -> Result<Vec<RunRow>> {
    let (env_seed, walk_seed) = replica_seeds(cfg.seed, r);
    let mut env = Environment::new(law.clone(), env_seed).with_cap(cfg.population_cap);
    let mut rng = stream(walk_seed, &[]);
    let mut walk = WalkRecord::new();
    let mut table = PathStatsTable::default();
    let mut rows = Vec::new();
    let mut done = 0u64;
    for &n in &cfg.n_grid {
        while done < n {
            run_excursion(&mut env, &mut walk, &mut rng, &cfg.caps)?;
            done += 1;
        }
        table.extend(&env);
        let cutoff = generation_cutoff(cfg.c0, n as f64);
        let line_hit = stopping_line_hit(&walk, &table, n as f64);
        for &theta in &cfg.thetas {
            let k = threshold(n, theta);
            let by_j = heavy_range_by_excursions(&walk, k);
            let heavy: usize = by_j.values().sum();
            let single = by_j.get(&1).copied().unwrap_or(0);
            rows.push(RunRow {
                theta,
                n,
                k,
                replica: r,
                seed: env_seed,
                heavy,
                heavy_single: single,
                heavy_multi: heavy - single,
                heavy_by_j: by_j,
                d_m: f64::NAN,
                w_m: f64::NAN,
                horizon: cfg.horizon,
                tau_n: walk.total_steps,
                max_depth: walk.max_depth,
                depth_cutoff_ok: walk.max_depth <= cutoff,
                line_hit,
                truncated_excursions: walk.truncated_excursions,
            });
        }
    }
    if cfg.horizon > 0 {
        let mp = martingale_streaming(&env, cfg.horizon)?;
        for row in &mut rows {
            row.d_m = mp.d;
            row.w_m = mp.w;
        }
    }
    Ok(rows)
}

/// Runs every replica (in parallel) and collects rows ordered by
/// `(replica, n, theta)`. Failed replicas are recorded and skipped.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunResult> {
    cfg.validate()?;
    let law = Arc::new(cfg.law.build()?);
    let outcomes: Vec<(usize, Result<Vec<RunRow>>)> = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| (r, run_replica(cfg, &law, r)))
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (r, out) in outcomes {
        match out {
            Ok(mut v) => rows.append(&mut v),
            Err(e) => failures.push(ReplicaFailure { replica: r, seed: replica_seeds(cfg.seed, r).0, error: e.to_string() }),
        }
    }
    let result = RunResult { config: cfg.clone(), rows, failures };
    if let Some(p) = &cfg.csv {
        result.write_csv(std::io::BufWriter::new(std::fs::File::create(p)?))?;
    }
    if let Some(p) = &cfg.json {
        let text = serde_json::to_string_pretty(&result.metadata()).map_err(|e| Error::Io(e.to_string()))?;
        std::fs::write(p, text)?;
    }
    Ok(result)
}

/// Parses a table written by [`RunResult::write_csv`].
pub fn read_csv(text: &str) -> Result<Vec<RunRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        _ => return Err(Error::Parse("missing or unexpected run table header".into())),
    }
    let parse_err = |i: usize, what: &str| Error::Parse(format!("line {}: bad {what}", i + 2));
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 17 {
                return Err(parse_err(i, "field count"));
            }
            macro_rules! num {
                ($j:expr, $t:ty, $name:expr) => {
                    f[$j].parse::<$t>().map_err(|_| parse_err(i, $name))?
                };
            }
            let mut by_j = BTreeMap::new();
            for part in f[8].split(';').filter(|s| !s.is_empty()) {
                let (j, c) = part.split_once(':').ok_or_else(|| parse_err(i, "histogram"))?;
                by_j.insert(
                    j.parse().map_err(|_| parse_err(i, "histogram"))?,
                    c.parse().map_err(|_| parse_err(i, "histogram"))?,
                );
            }
            Ok(RunRow {
                theta: num!(0, f64, "theta"),
                n: num!(1, u64, "n"),
                k: num!(2, u64, "k"),
                replica: num!(3, usize, "replica"),
                seed: num!(4, u64, "seed"),
                heavy: num!(5, usize, "heavy"),
                heavy_single: num!(6, usize, "heavy_single"),
                heavy_multi: num!(7, usize, "heavy_multi"),
                heavy_by_j: by_j,
                d_m: num!(9, f64, "d_m"),
                w_m: num!(10, f64, "w_m"),
                horizon: num!(11, u32, "horizon"),
                tau_n: num!(12, u64, "tau_n"),
                max_depth: num!(13, u32, "max_depth"),
                depth_cutoff_ok: num!(14, bool, "depth_cutoff_ok"),
                line_hit: num!(15, bool, "line_hit"),
                truncated_excursions: num!(16, u32, "truncated_excursions"),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub theta: f64,
    pub slope: f64,
    /// Jackknife over replicas.
    pub se: f64,
    pub intercept: f64,
    /// `(n, mean over replicas of ln R)`.
    pub points: Vec<(u64, f64)>,
    pub replicas: usize,
}

/// Least-squares slope of the replica-averaged `ln R` against `ln n`.
/// Only replicas present at every grid point are used, so that the
/// jackknife deletes whole replicas.
pub fn fit_exponent(rows: &[RunRow], theta: f64) -> Result<ExponentFit> {
    let mut grid: Vec<u64> = rows.iter().filter(|r| r.theta == theta).map(|r| r.n).collect();
    grid.sort_unstable();
    grid.dedup();
    if grid.len() < 4 {
        return Err(Error::InsufficientData(format!("need 4 grid points at theta={theta}, have {}", grid.len())));
    }
    let mut per_rep: BTreeMap<usize, BTreeMap<u64, f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.theta == theta) {
        per_rep.entry(r.replica).or_default().insert(r.n, (r.heavy.max(1) as f64).ln());
    }
    let reps: Vec<Vec<f64>> = per_rep
        .values()
        .filter(|m| m.len() == grid.len())
        .map(|m| grid.iter().map(|n| m[n]).collect())
        .collect();
    if reps.is_empty() {
        return Err(Error::InsufficientData("no replica covers the whole grid".into()));
    }
    let x: Vec<f64> = grid.iter().map(|&n| (n as f64).ln()).collect();
    let means = |skip: Option<usize>| -> Vec<f64> {
        let mut acc = vec![0.0; grid.len()];
        let mut cnt = 0.0;
        for (i, r) in reps.iter().enumerate() {
            if Some(i) == skip {
                continue;
            }
            acc.iter_mut().zip(r).for_each(|(a, v)| *a += v);
            cnt += 1.0;
        }
        acc.into_iter().map(|a| a / cnt).collect()
    };
    let full = means(None);
    let fit = linear_fit(&x, &full).ok_or_else(|| Error::InsufficientData("degenerate fit".into()))?;
    let (_, se) = jackknife(reps.len(), |g| {
        linear_fit(&x, &means(g)).map(|f| f.slope).unwrap_or(f64::NAN)
    });
    Ok(ExponentFit {
        theta,
        slope: fit.slope,
        se: if reps.len() >= 2 { se } else { fit.slope_se },
        intercept: fit.intercept,
        points: grid.iter().copied().zip(full).collect(),
        replicas: reps.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DCorrelation {
    pub theta: f64,
    pub n: u64,
    pub environments: usize,
    pub slope: f64,
    pub intercept: f64,
    pub intercept_se: f64,
    pub r: f64,
    pub r_se: f64,
    /// Correlation after randomly permuting the `D_M` column.
    pub permuted_r: f64,
    pub permuted_r_se: f64,
    pub degenerate: bool,
}

/// Regression of `R / n^{1-theta}` on `D_M` across environments.
pub fn correlate_with_d(rows: &[RunRow], theta: f64, n: u64, seed: u64) -> Result<DCorrelation> {
    let sel: Vec<&RunRow> = rows.iter().filter(|r| r.theta == theta && r.n == n && r.d_m.is_finite()).collect();
    if sel.len() < 30 {
        return Err(Error::InsufficientData(format!("need 30 environments with D_M, have {}", sel.len())));
    }
    let scale = (n as f64).powf(1.0 - theta);
    let x: Vec<f64> = sel.iter().map(|r| r.d_m).collect();
    let y: Vec<f64> = sel.iter().map(|r| r.heavy as f64 / scale).collect();
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
    let degenerate = !(var > 1e-12);
    let fit = linear_fit(&x, &y).ok_or_else(|| Error::InsufficientData("degenerate regression".into()))?;
    let (r, r_se) = pearson(&x, &y).unwrap_or((0.0, f64::NAN));
    let mut xp = x.clone();
    xp.shuffle(&mut stream(seed, &[0xC0, n, theta.to_bits()]));
    let (pr, pr_se) = pearson(&xp, &y).unwrap_or((0.0, f64::NAN));
    Ok(DCorrelation {
        theta,
        n,
        environments: sel.len(),
        slope: fit.slope,
        intercept: fit.intercept,
        intercept_se: fit.intercept_se,
        r,
        r_se,
        permuted_r: pr,
        permuted_r_se: pr_se,
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HitRate {
    pub n: u64,
    pub hits: u64,
    pub total: u64,
    pub lo: f64,
    pub hi: f64,
}

/// Stopping-line hit frequency at level `r = n` per grid point, with
/// 95% Wilson intervals. One row per replica is used (the first theta).
pub fn line_hit_rates(rows: &[RunRow]) -> Vec<HitRate> {
    let Some(theta) = rows.first().map(|r| r.theta) else {
        return Vec::new();
    };
    let mut by_n: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.theta == theta) {
        let e = by_n.entry(r.n).or_default();
        e.0 += u64::from(r.line_hit);
        e.1 += 1;
    }
    by_n.into_iter()
        .map(|(n, (hits, total))| {
            let (lo, hi) = wilson_interval(hits, total, 1.96);
            HitRate { n, hits, total, lo, hi }
        })
        .collect()
}

/// No significant increase between consecutive grid points: each lower
/// Wilson bound stays below the previous upper bound.
pub fn hit_rates_non_increasing(rates: &[HitRate]) -> bool {
    rates.windows(2).all(|w| w[1].lo <= w[0].hi)
}
