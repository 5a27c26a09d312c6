//! Offspring point processes of the branching random walk that generates
//! the environment, and the boundary-case checks every law must pass.

use std::fmt;
use std::sync::Arc;

use rand::RngExt;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::SimRng;
use crate::stats::Summary;

/// Exponent used for the integrability probes `E[sum e^{d V}]` and
/// `E[sum e^{-(1+d) V}]`.
pub const INTEGRABILITY_DELTA: f64 = 0.5;

const ANALYTIC_TOL: f64 = 1e-9;

/// A user supplied point process: fills `out` with the displacements of the
/// children of one individual.
pub trait PointProcess: Send + Sync {
    fn sample(&self, rng: &mut SimRng, out: &mut Vec<f64>);
    fn name(&self) -> String;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteAtom {
    pub prob: f64,
    pub displacements: Vec<f64>,
}

#[derive(Clone)]
pub enum LawKind {
    /// Two children with i.i.d. `N(mean, variance)` displacements.
    GaussianBinary { mean: f64, variance: f64 },
    /// Finitely many point configurations.
    Discrete { atoms: Vec<DiscreteAtom>, cumulative: Vec<f64> },
    Custom(Arc<dyn PointProcess>),
}

impl fmt::Debug for LawKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LawKind::GaussianBinary { mean, variance } => f
                .debug_struct("GaussianBinary")
                .field("mean", mean)
                .field("variance", variance)
                .finish(),
            LawKind::Discrete { atoms, .. } => {
                f.debug_struct("Discrete").field("atoms", atoms).finish()
            }
            LawKind::Custom(p) => write!(f, "Custom({})", p.name()),
        }
    }
}

/// Moments of the offspring point process, known in closed form or by
/// exact enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticMoments {
    /// `E[sum e^{-V}]`
    pub mean_additive: f64,
    /// `E[sum V e^{-V}]`
    pub mean_derivative: f64,
    /// `E[sum V^2 e^{-V}]`
    pub sigma2: f64,
    /// `E[N]`
    pub mean_offspring: f64,
    /// `E[N^2]`
    pub offspring_second_moment: f64,
    /// `E[(sum (1+V_+)^2 e^{-V})^2]`
    pub moment_cond: f64,
    /// `E[sum e^{d V}]` at `d = INTEGRABILITY_DELTA`
    pub integrability_pos: f64,
    /// `E[sum e^{-(1+d) V}]`
    pub integrability_neg: f64,
}

#[derive(Debug, Clone)]
pub struct OffspringLaw {
    pub kind: LawKind,
    pub analytic: Option<AnalyticMoments>,
}

impl OffspringLaw {
    /// Binary law with i.i.d. `N(2 ln 2, 2 ln 2)` displacements: the
    /// simplest Gaussian law in the boundary case.
    pub fn canonical() -> Self {
        let l2 = 2.0 * std::f64::consts::LN_2;
        Self::gaussian_binary(l2, l2).expect("valid parameters")
    }

    pub fn gaussian_binary(mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite() && mean.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gaussian-binary needs finite mean and positive variance, got ({mean}, {variance})"
            )));
        }
        let analytic = gaussian_binary_moments(mean, variance);
        Ok(Self { kind: LawKind::GaussianBinary { mean, variance }, analytic: Some(analytic) })
    }

    pub fn discrete(atoms: Vec<DiscreteAtom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidArgument("discrete law needs at least one atom".into()));
        }
        let total: f64 = atoms.iter().map(|a| a.prob).sum();
        if atoms.iter().any(|a| !(a.prob >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "atom probabilities must be non-negative and sum to 1 (sum = {total})"
            )));
        }
        if atoms.iter().flat_map(|a| &a.displacements).any(|d| !d.is_finite()) {
            return Err(Error::InvalidArgument("non-finite displacement".into()));
        }
        let mut cumulative = Vec::with_capacity(atoms.len());
        let mut acc = 0.0;
        for a in &atoms {
            acc += a.prob / total;
            cumulative.push(acc);
        }
        let analytic = discrete_moments(&atoms);
        Ok(Self { kind: LawKind::Discrete { atoms, cumulative }, analytic: Some(analytic) })
    }

    pub fn custom(process: Arc<dyn PointProcess>) -> Self {
        Self { kind: LawKind::Custom(process), analytic: None }
    }

    /// Draws the displacements of one family into `out` (cleared first).
    #[inline]
    pub fn sample_children(&self, rng: &mut SimRng, out: &mut Vec<f64>) {
        out.clear();
        match &self.kind {
            LawKind::GaussianBinary { mean, variance } => {
                let z: [f64; 2] = [
                    rng.sample(rand_distr::StandardNormal),
                    rng.sample(rand_distr::StandardNormal),
                ];
                let s = variance.sqrt();
                out.push(mean + s * z[0]);
                out.push(mean + s * z[1]);
            }
            LawKind::Discrete { atoms, cumulative } => {
                let u: f64 = rng.random();
                let idx = cumulative.partition_point(|&c| c <= u).min(atoms.len() - 1);
                out.extend_from_slice(&atoms[idx].displacements);
            }
            LawKind::Custom(p) => p.sample(rng, out),
        }
    }

    pub fn describe(&self) -> String {
        match &self.kind {
            LawKind::GaussianBinary { mean, variance } => {
                format!("gaussian-binary(mean={mean}, variance={variance})")
            }
            LawKind::Discrete { atoms, .. } => format!("discrete({} atoms)", atoms.len()),
            LawKind::Custom(p) => format!("custom({})", p.name()),
        }
    }
}

fn gaussian_binary_moments(mu: f64, s2: f64) -> AnalyticMoments {
    // E[e^{-xi}] = e^{-mu + s2/2}; under the tilt e^{-xi} the displacement
    // is N(mu - s2, s2).
    let tilt_mass = (-mu + 0.5 * s2).exp();
    let tilted_mean = mu - s2;
    let d = INTEGRABILITY_DELTA;
    // E[X] and E[X^2] for X = (1 + xi_+)^2 e^{-xi} by quadrature.
    let s = s2.sqrt();
    let ex = gauss_expectation(mu, s, |x| (1.0 + x.max(0.0)).powi(2) * (-x).exp());
    let ex2 = gauss_expectation(mu, s, |x| (1.0 + x.max(0.0)).powi(4) * (-2.0 * x).exp());
    AnalyticMoments {
        mean_additive: 2.0 * tilt_mass,
        mean_derivative: 2.0 * tilt_mass * tilted_mean,
        sigma2: 2.0 * tilt_mass * (tilted_mean * tilted_mean + s2),
        mean_offspring: 2.0,
        offspring_second_moment: 4.0,
        moment_cond: 2.0 * ex2 + 2.0 * ex * ex,
        integrability_pos: 2.0 * (d * mu + 0.5 * d * d * s2).exp(),
        integrability_neg: 2.0 * (-(1.0 + d) * mu + 0.5 * (1.0 + d).powi(2) * s2).exp(),
    }
}

/// `E[f(X)]` for `X ~ N(mu, s^2)` by composite Simpson on `mu +- 14 s`.
fn gauss_expectation(mu: f64, s: f64, f: impl Fn(f64) -> f64) -> f64 {
    let panels = 40_000;
    let (lo, hi) = (-14.0, 14.0);
    let h = (hi - lo) / panels as f64;
    let g = |z: f64| f(mu + s * z) * crate::stats::normal_pdf(z);
    let mut acc = g(lo) + g(hi);
    for i in 1..panels {
        let z = lo + i as f64 * h;
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * g(z);
    }
    acc * h / 3.0
}

fn discrete_moments(atoms: &[DiscreteAtom]) -> AnalyticMoments {
    let d = INTEGRABILITY_DELTA;
    let mut m = AnalyticMoments {
        mean_additive: 0.0,
        mean_derivative: 0.0,
        sigma2: 0.0,
        mean_offspring: 0.0,
        offspring_second_moment: 0.0,
        moment_cond: 0.0,
        integrability_pos: 0.0,
        integrability_neg: 0.0,
    };
    for a in atoms {
        let p = a.prob;
        let n = a.displacements.len() as f64;
        let sum = |f: &dyn Fn(f64) -> f64| a.displacements.iter().map(|&v| f(v)).sum::<f64>();
        m.mean_additive += p * sum(&|v| (-v).exp());
        m.mean_derivative += p * sum(&|v| v * (-v).exp());
        m.sigma2 += p * sum(&|v| v * v * (-v).exp());
        m.mean_offspring += p * n;
        m.offspring_second_moment += p * n * n;
        m.moment_cond += p * sum(&|v| (1.0 + v.max(0.0)).powi(2) * (-v).exp()).powi(2);
        m.integrability_pos += p * sum(&|v| (d * v).exp());
        m.integrability_neg += p * sum(&|v| (-(1.0 + d) * v).exp());
    }
    m
}

/// Outcome of [`verify_boundary_case`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub additive_mean: f64,
    pub additive_se: f64,
    pub derivative_mean: f64,
    pub derivative_se: f64,
    pub sigma2: f64,
    pub mean_offspring: f64,
    pub offspring_second_moment: f64,
    pub moment_cond: f64,
    pub integrability_pos: f64,
    pub integrability_neg: f64,
    pub analytic: bool,
    pub samples: u64,
    pub pass: bool,
    pub failures: Vec<String>,
}

/// Checks the normalisation `E[sum e^{-V}] = 1`, `E[sum V e^{-V}] = 0`,
/// supercriticality, and finiteness of the moment and integrability
/// conditions. Analytic moments are used when the law carries them;
/// otherwise the targets must lie within `tolerance` standard errors of a
/// Monte Carlo estimate from `sample_count` families.
pub fn verify_boundary_case(
    law: &OffspringLaw,
    sample_count: u64,
    tolerance: f64,
    rng: &mut SimRng,
) -> Result<BoundaryReport> {
    if sample_count < 1_000 {
        return Err(Error::InvalidArgument(format!(
            "sample_count must be at least 1000, got {sample_count}"
        )));
    }
    let (m, additive_se, derivative_se, analytic) = match law.analytic {
        Some(m) => (m, 0.0, 0.0, true),
        None => {
            let (m, ase, dse) = monte_carlo_moments(law, sample_count, rng);
            (m, ase, dse, false)
        }
    };
    if !(m.mean_offspring > 1.0) {
        return Err(Error::NotSupercritical(m.mean_offspring));
    }
    let finite = [
        ("E[sum e^-V]", m.mean_additive),
        ("E[sum V e^-V]", m.mean_derivative),
        ("sigma2", m.sigma2),
        ("E[N^2]", m.offspring_second_moment),
        ("moment condition", m.moment_cond),
        ("E[sum e^(d V)]", m.integrability_pos),
        ("E[sum e^(-(1+d) V)]", m.integrability_neg),
    ];
    if let Some((name, v)) = finite.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFiniteMoment(format!("{name} = {v}")));
    }

    let mut failures = Vec::new();
    let close = |value: f64, target: f64, se: f64| {
        if analytic {
            (value - target).abs() <= ANALYTIC_TOL
        } else {
            (value - target).abs() <= tolerance * se
        }
    };
    if !close(m.mean_additive, 1.0, additive_se) {
        failures.push(format!("E[sum e^-V] = {} != 1", m.mean_additive));
    }
    if !close(m.mean_derivative, 0.0, derivative_se) {
        failures.push(format!("E[sum V e^-V] = {} != 0", m.mean_derivative));
    }
    if !(m.sigma2 > 0.0) {
        failures.push(format!("sigma2 = {} is not positive", m.sigma2));
    }

    Ok(BoundaryReport {
        additive_mean: m.mean_additive,
        additive_se,
        derivative_mean: m.mean_derivative,
        derivative_se,
        sigma2: m.sigma2,
        mean_offspring: m.mean_offspring,
        offspring_second_moment: m.offspring_second_moment,
        moment_cond: m.moment_cond,
        integrability_pos: m.integrability_pos,
        integrability_neg: m.integrability_neg,
        analytic,
        samples: if analytic { 0 } else { sample_count },
        pass: failures.is_empty(),
        failures,
    })
}

/// Monte Carlo estimates of every moment of [`AnalyticMoments`], with the
/// standard errors of the additive and derivative means.
pub fn monte_carlo_moments(
    law: &OffspringLaw,
    samples: u64,
    rng: &mut SimRng,
) -> (AnalyticMoments, f64, f64) {
    let d = INTEGRABILITY_DELTA;
    let n = samples as usize;
    let mut cols: [Vec<f64>; 8] = Default::default();
    for c in cols.iter_mut() {
        c.reserve(n);
    }
    let mut buf = Vec::new();
    for _ in 0..n {
        law.sample_children(rng, &mut buf);
        let s = |f: &dyn Fn(f64) -> f64| buf.iter().map(|&v| f(v)).sum::<f64>();
        let k = buf.len() as f64;
        cols[0].push(s(&|v| (-v).exp()));
        cols[1].push(s(&|v| v * (-v).exp()));
        cols[2].push(s(&|v| v * v * (-v).exp()));
        cols[3].push(k);
        cols[4].push(k * k);
        cols[5].push(s(&|v| (1.0 + v.max(0.0)).powi(2) * (-v).exp()).powi(2));
        cols[6].push(s(&|v| (d * v).exp()));
        cols[7].push(s(&|v| (-(1.0 + d) * v).exp()));
    }
    let sm: Vec<Summary> = cols.iter().map(|c| Summary::of(c)).collect();
    (
        AnalyticMoments {
            mean_additive: sm[0].mean,
            mean_derivative: sm[1].mean,
            sigma2: sm[2].mean,
            mean_offspring: sm[3].mean,
            offspring_second_moment: sm[4].mean,
            moment_cond: sm[5].mean,
            integrability_pos: sm[6].mean,
            integrability_neg: sm[7].mean,
        },
        sm[0].se(),
        sm[1].se(),
    )
}

/// Serializable law description used by configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LawSpec {
    Canonical,
    GaussianBinary { mean: f64, variance: f64 },
    Discrete { atoms: Vec<DiscreteAtom> },
}

impl Default for LawSpec {
    fn default() -> Self {
        LawSpec::Canonical
    }
}

impl LawSpec {
    pub fn build(&self) -> Result<OffspringLaw> {
        match self {
            LawSpec::Canonical => Ok(OffspringLaw::canonical()),
            LawSpec::GaussianBinary { mean, variance } => {
                OffspringLaw::gaussian_binary(*mean, *variance)
            }
            LawSpec::Discrete { atoms } => OffspringLaw::discrete(atoms.clone()),
        }
    }
}

/// The one-step distribution of the many-to-one random walk: the
/// displacement tilted by `e^{-V}`, when it is known in closed form.
pub fn tilted_increment(law: &OffspringLaw) -> Option<crate::rw1d::Walk1DLaw> {
    use crate::rw1d::Walk1DLaw;
    match &law.kind {
        LawKind::GaussianBinary { mean, variance } => {
            Some(Walk1DLaw::Gaussian { mean: mean - variance, sigma: variance.sqrt() })
        }
        LawKind::Discrete { atoms, .. } => {
            let mut points: Vec<(f64, f64)> = Vec::new();
            for a in atoms {
                for &v in &a.displacements {
                    let w = a.prob * (-v).exp();
                    match points.iter_mut().find(|(x, _)| *x == v) {
                        Some(p) => p.1 += w,
                        None => points.push((v, w)),
                    }
                }
            }
            let total: f64 = points.iter().map(|p| p.1).sum();
            points.iter_mut().for_each(|p| p.1 /= total);
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Some(Walk1DLaw::discrete(points))
        }
        LawKind::Custom(_) => None,
    }
}

/// Draws a sample of `Normal(mean, sd)` values; convenience for tests and
/// oracles that need the reference distribution directly.
pub fn normal_samples(mean: f64, sd: f64, n: usize, rng: &mut SimRng) -> Vec<f64> {
    let d = Normal::new(mean, sd).expect("sd > 0");
    (0..n).map(|_| d.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn canonical_law_is_in_the_boundary_case() {
        let m = OffspringLaw::canonical().analytic.unwrap();
        assert!((m.mean_additive - 1.0).abs() < 1e-15);
        assert!(m.mean_derivative.abs() < 1e-15);
        assert!((m.sigma2 - 2.0 * LN2).abs() < 1e-14);
        assert_eq!(m.mean_offspring, 2.0);
    }

    #[test]
    fn canonical_verification_passes_analytically() {
        let mut rng = stream(1, &[]);
        let r = verify_boundary_case(&OffspringLaw::canonical(), 1_000, 3.0, &mut rng).unwrap();
        assert!(r.pass, "{:?}", r.failures);
        assert!(r.analytic);
        assert!((r.sigma2 - 1.3862943611198906).abs() < 1e-12);
        assert!(r.moment_cond.is_finite() && r.moment_cond > 0.0);
    }

    #[test]
    fn single_child_law_is_rejected() {
        let law = OffspringLaw::discrete(vec![DiscreteAtom { prob: 1.0, displacements: vec![0.0] }])
            .unwrap();
        let err = verify_boundary_case(&law, 1_000, 3.0, &mut stream(1, &[])).unwrap_err();
        assert_eq!(err.to_string(), "E[N]=1 not supercritical");
    }

    #[test]
    fn shifted_binary_law_fails_the_derivative_condition() {
        let law = OffspringLaw::discrete(vec![DiscreteAtom {
            prob: 1.0,
            displacements: vec![LN2, LN2],
        }])
        .unwrap();
        let r = verify_boundary_case(&law, 1_000, 3.0, &mut stream(1, &[])).unwrap();
        assert!((r.additive_mean - 1.0).abs() < 1e-15);
        assert!((r.derivative_mean - LN2).abs() < 1e-15);
        assert!(!r.pass);
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let e = verify_boundary_case(&OffspringLaw::canonical(), 10, 3.0, &mut stream(1, &[]));
        assert!(matches!(e, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn monte_carlo_moments_agree_with_closed_form() {
        let law = OffspringLaw::canonical();
        let (m, ase, dse) = monte_carlo_moments(&law, 200_000, &mut stream(3, &[]));
        assert!((m.mean_additive - 1.0).abs() < 4.0 * ase);
        assert!(m.mean_derivative.abs() < 4.0 * dse);
    }

    #[test]
    fn law_spec_round_trips_through_toml() {
        let spec = LawSpec::GaussianBinary { mean: 1.0, variance: 0.5 };
        let text = toml::to_string(&spec).unwrap();
        assert!(text.contains("kind = \"gaussian-binary\""));
        let back: LawSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
