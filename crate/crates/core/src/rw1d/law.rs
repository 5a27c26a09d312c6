use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::SimRng;
use crate::stats::{normal_cdf, normal_pdf};

/// Increment law of a one-dimensional walk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Walk1DLaw {
    Gaussian { mean: f64, sigma: f64 },
    /// Uniform on `[-half_width, half_width]`.
    Uniform { half_width: f64 },
    /// `U + eps Z` with `U` uniform on `[-half_width, half_width]`.
    UniformPlusGaussian { half_width: f64, eps: f64 },
    /// `+1` or `-1` with equal probability.
    Rademacher,
    /// Finite support given as sorted `(value, probability)` pairs.
    Discrete { points: Vec<(f64, f64)> },
}

impl Walk1DLaw {
    pub fn standard_gaussian() -> Self {
        Walk1DLaw::Gaussian { mean: 0.0, sigma: 1.0 }
    }

    /// Uniform law with the given standard deviation.
    pub fn uniform_with_sigma(sigma: f64) -> Self {
        Walk1DLaw::Uniform { half_width: sigma * 3f64.sqrt() }
    }

    /// Lattice-free perturbation of a bounded law: `U[-1, 1] + 0.1 Z`.
    pub fn smoothed_uniform() -> Self {
        Walk1DLaw::UniformPlusGaussian { half_width: 1.0, eps: 0.1 }
    }

    /// Builds a discrete law; probabilities are normalised and points sorted.
    pub fn discrete(mut points: Vec<(f64, f64)>) -> Self {
        points.retain(|p| p.1 > 0.0);
        let total: f64 = points.iter().map(|p| p.1).sum();
        points.iter_mut().for_each(|p| p.1 /= total);
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        Walk1DLaw::Discrete { points }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Walk1DLaw::Gaussian { mean, sigma } => mean.is_finite() && *sigma > 0.0 && sigma.is_finite(),
            Walk1DLaw::Uniform { half_width } => *half_width > 0.0 && half_width.is_finite(),
            Walk1DLaw::UniformPlusGaussian { half_width, eps } => {
                *half_width > 0.0 && *eps > 0.0 && half_width.is_finite() && eps.is_finite()
            }
            Walk1DLaw::Rademacher => true,
            Walk1DLaw::Discrete { points } => {
                points.len() >= 2 && points.iter().all(|p| p.0.is_finite() && p.1 > 0.0)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("degenerate increment law {self:?}")))
        }
    }

    pub fn name(&self) -> String {
        match self {
            Walk1DLaw::Gaussian { mean, sigma } => format!("gaussian(mean={mean}, sigma={sigma})"),
            Walk1DLaw::Uniform { half_width } => format!("uniform(+-{half_width})"),
            Walk1DLaw::UniformPlusGaussian { half_width, eps } => {
                format!("uniform(+-{half_width})+{eps}*gaussian")
            }
            Walk1DLaw::Rademacher => "rademacher".into(),
            Walk1DLaw::Discrete { points } => format!("discrete({} points)", points.len()),
        }
    }

    #[inline]
    pub fn sample(&self, rng: &mut SimRng) -> f64 {
        match self {
            Walk1DLaw::Gaussian { mean, sigma } => {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                mean + sigma * z
            }
            Walk1DLaw::Uniform { half_width } => half_width * (2.0 * rng.random::<f64>() - 1.0),
            Walk1DLaw::UniformPlusGaussian { half_width, eps } => {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                half_width * (2.0 * rng.random::<f64>() - 1.0) + eps * z
            }
            Walk1DLaw::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            Walk1DLaw::Discrete { points } => {
                let mut u: f64 = rng.random();
                for &(v, p) in points {
                    if u < p {
                        return v;
                    }
                    u -= p;
                }
                points[points.len() - 1].0
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Walk1DLaw::Gaussian { mean, .. } => *mean,
            Walk1DLaw::Discrete { points } => points.iter().map(|(v, p)| v * p).sum(),
            _ => 0.0,
        }
    }

    /// Variance of one increment.
    pub fn sigma2(&self) -> f64 {
        match self {
            Walk1DLaw::Gaussian { sigma, .. } => sigma * sigma,
            Walk1DLaw::Uniform { half_width } => half_width * half_width / 3.0,
            Walk1DLaw::UniformPlusGaussian { half_width, eps } => {
                half_width * half_width / 3.0 + eps * eps
            }
            Walk1DLaw::Rademacher => 1.0,
            Walk1DLaw::Discrete { points } => {
                let m = self.mean();
                points.iter().map(|(v, p)| p * (v - m) * (v - m)).sum()
            }
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2().sqrt()
    }

    /// True when the law lives on a lattice, which excludes it from the
    /// local-limit estimators.
    pub fn is_lattice(&self) -> bool {
        matches!(self, Walk1DLaw::Rademacher | Walk1DLaw::Discrete { .. })
    }

    /// `P(xi <= x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Walk1DLaw::Gaussian { mean, sigma } => normal_cdf((x - mean) / sigma),
            Walk1DLaw::Uniform { half_width: w } => ((x + w) / (2.0 * w)).clamp(0.0, 1.0),
            Walk1DLaw::UniformPlusGaussian { half_width: w, eps } => {
                // (1/2w) int_{-w}^{w} Phi((x - u)/eps) du
                let psi = |z: f64| z * normal_cdf(z) + normal_pdf(z);
                (eps / (2.0 * w) * (psi((x + w) / eps) - psi((x - w) / eps))).clamp(0.0, 1.0)
            }
            Walk1DLaw::Rademacher => {
                if x < -1.0 {
                    0.0
                } else if x < 1.0 {
                    0.5
                } else {
                    1.0
                }
            }
            Walk1DLaw::Discrete { points } => {
                points.iter().filter(|(v, _)| *v <= x).map(|(_, p)| p).sum()
            }
        }
    }

    /// `P(xi > x)`, accurate far in the upper tail.
    pub fn sf(&self, x: f64) -> f64 {
        match self {
            Walk1DLaw::Gaussian { mean, sigma } => crate::stats::normal_sf((x - mean) / sigma),
            Walk1DLaw::UniformPlusGaussian { half_width: w, eps } => {
                let psi = |z: f64| -z * crate::stats::normal_sf(z) + normal_pdf(z);
                (eps / (2.0 * w) * (psi((x - w) / eps) - psi((x + w) / eps))).clamp(0.0, 1.0)
            }
            Walk1DLaw::Discrete { points } => {
                points.iter().filter(|(v, _)| *v > x).map(|(_, p)| p).sum()
            }
            _ => 1.0 - self.cdf(x),
        }
    }

    /// `P(lo <= xi < hi)` for a continuous law.
    pub fn prob_interval(&self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        if lo > 0.0 {
            (self.sf(lo) - self.sf(hi)).max(0.0)
        } else {
            (self.cdf(hi) - self.cdf(lo)).max(0.0)
        }
    }

    /// Bound on the support in units of the law: steps beyond this many
    /// standard deviations carry negligible mass (`< 1e-15`).
    pub fn tail_reach(&self) -> f64 {
        match self {
            Walk1DLaw::Gaussian { sigma, .. } => 8.3 * sigma,
            Walk1DLaw::Uniform { half_width } => *half_width,
            Walk1DLaw::UniformPlusGaussian { half_width, eps } => half_width + 8.3 * eps,
            Walk1DLaw::Rademacher => 1.0,
            Walk1DLaw::Discrete { points } => points.iter().map(|p| p.0.abs()).fold(0.0, f64::max),
        }
    }

    /// `E[e^{t xi}]`.
    pub fn exp_moment(&self, t: f64) -> f64 {
        match self {
            Walk1DLaw::Gaussian { mean, sigma } => (t * mean + 0.5 * t * t * sigma * sigma).exp(),
            Walk1DLaw::Uniform { half_width: w } => {
                if t == 0.0 {
                    1.0
                } else {
                    (t * w).sinh() / (t * w)
                }
            }
            Walk1DLaw::UniformPlusGaussian { half_width, eps } => {
                Walk1DLaw::Uniform { half_width: *half_width }.exp_moment(t)
                    * (0.5 * t * t * eps * eps).exp()
            }
            Walk1DLaw::Rademacher => t.cosh(),
            Walk1DLaw::Discrete { points } => points.iter().map(|(v, p)| p * (t * v).exp()).sum(),
        }
    }

    /// `E[e^{-d xi}] + E[e^{(1+d) xi}]`, which must be finite.
    pub fn integrability(&self, delta: f64) -> f64 {
        self.exp_moment(-delta) + self.exp_moment(1.0 + delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream;
    use crate::stats::Summary;

    #[test]
    fn sample_moments_match_analytic_ones() {
        let laws = [
            Walk1DLaw::standard_gaussian(),
            Walk1DLaw::uniform_with_sigma(1.0),
            Walk1DLaw::smoothed_uniform(),
            Walk1DLaw::Rademacher,
            Walk1DLaw::discrete(vec![(-1.0, 2.0), (2.0, 1.0)]),
        ];
        for law in &laws {
            let mut rng = stream(1, &[]);
            let xs: Vec<f64> = (0..200_000).map(|_| law.sample(&mut rng)).collect();
            let s = Summary::of(&xs);
            assert!(s.within(law.mean(), 4.0), "{} mean {}", law.name(), s.mean);
            let sq: Vec<f64> = xs.iter().map(|x| (x - law.mean()).powi(2)).collect();
            assert!(Summary::of(&sq).within(law.sigma2(), 4.0), "{}", law.name());
        }
    }

    #[test]
    fn cdf_and_sf_are_complementary() {
        for law in [Walk1DLaw::standard_gaussian(), Walk1DLaw::smoothed_uniform(), Walk1DLaw::uniform_with_sigma(2.0)] {
            for &x in &[-3.0, -1.0, -0.2, 0.0, 0.4, 1.05, 2.5] {
                assert!((law.cdf(x) + law.sf(x) - 1.0).abs() < 1e-12, "{} {x}", law.name());
            }
        }
    }

    #[test]
    fn smoothed_uniform_cdf_matches_empirical() {
        let law = Walk1DLaw::smoothed_uniform();
        let mut rng = stream(2, &[]);
        let xs: Vec<f64> = (0..100_000).map(|_| law.sample(&mut rng)).collect();
        let ks = crate::stats::ks_one_sample(&xs, |x| law.cdf(x));
        assert!(ks.p_value > 0.001, "{ks:?}");
    }

    #[test]
    fn integrability_is_finite_for_registered_laws() {
        assert!(Walk1DLaw::standard_gaussian().integrability(0.5).is_finite());
        assert!(Walk1DLaw::smoothed_uniform().integrability(0.5).is_finite());
    }
}
