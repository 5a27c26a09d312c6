use serde::{Deserialize, Serialize};

use super::renewal::{renewal_function, renewal_slope, RenewalCurve};
use super::Walk1DLaw;
use crate::error::{Error, Result};
use crate::seed::{stream, SimRng};
use crate::stats::{binomial_se, linear_fit, ConstantEstimate, Summary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    /// `P(min_{k<=n} S_k >= 0)`
    Plus,
    /// `P(max_{k<=n} S_k <= 0)`
    Minus,
}

/// `sqrt(n) P(min S >= 0)` (or the reflected version) from `replicas`
/// independent walks, each stopped as soon as it leaves the half line.
pub fn positivity_constant(
    law: &Walk1DLaw,
    n: usize,
    replicas: u64,
    side: Side,
    rng: &mut SimRng,
) -> ConstantEstimate {
    let sign = match side {
        Side::Plus => 1.0,
        Side::Minus => -1.0,
    };
    let mut hits = 0u64;
    for _ in 0..replicas {
        let mut s = 0.0;
        let mut ok = true;
        for _ in 0..n {
            s += sign * law.sample(rng);
            if s < 0.0 {
                ok = false;
                break;
            }
        }
        hits += u64::from(ok);
    }
    let r = (n as f64).sqrt();
    let (name, method) = match side {
        Side::Plus => ("c_plus", "sqrt(n) P(min >= 0)"),
        Side::Minus => ("c_minus", "sqrt(n) P(max <= 0)"),
    };
    ConstantEstimate::new(name, r * hits as f64 / replicas as f64, r * binomial_se(hits, replicas), replicas, method)
        .with_param("n", n as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub law: String,
    /// Estimates at each grid size, ascending.
    pub c_plus_grid: Vec<ConstantEstimate>,
    pub c_minus_grid: Vec<ConstantEstimate>,
    /// Values at the largest grid size.
    pub c_plus: ConstantEstimate,
    pub c_minus: ConstantEstimate,
    /// Intercept of a fit of `sqrt(n) P` against `n^{-1/2}`, when the grid
    /// has at least two sizes.
    pub c_plus_extrapolated: Option<ConstantEstimate>,
    pub c_r: ConstantEstimate,
    pub sigma2: ConstantEstimate,
    pub sigma2_exact: f64,
    pub product: ConstantEstimate,
    /// `sqrt(2 / (pi sigma^2))`
    pub product_target: f64,
    pub product_rel_error: f64,
    pub renewal: RenewalCurve,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstantsSpec {
    pub n_grid: Vec<usize>,
    pub replicas: u64,
    pub renewal_grid: Vec<f64>,
    pub renewal_replicas: u64,
    pub variance_samples: u64,
}

impl Default for ConstantsSpec {
    fn default() -> Self {
        Self {
            n_grid: vec![10_000],
            replicas: 1_000_000,
            renewal_grid: (1..=10).map(|k| 20.0 * k as f64).collect(),
            renewal_replicas: 1_000,
            variance_samples: 1_000_000,
        }
    }
}

/// Estimates `c_+`, `c_-`, `c_R` and `sigma^2` and checks the product
/// identity `c_R c_+ = sqrt(2 / (pi sigma^2))`.
pub fn estimate_constants(law: &Walk1DLaw, spec: &ConstantsSpec, seed: u64) -> Result<ConstantsReport> {
    law.validate()?;
    if spec.n_grid.is_empty() || spec.n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("n grid must be non-empty and ascending".into()));
    }
    let mut flags = Vec::new();
    let c_plus_grid: Vec<ConstantEstimate> = spec
        .n_grid
        .iter()
        .map(|&n| positivity_constant(law, n, spec.replicas, Side::Plus, &mut stream(seed, &[1, n as u64])))
        .collect();
    let c_minus_grid: Vec<ConstantEstimate> = spec
        .n_grid
        .iter()
        .map(|&n| positivity_constant(law, n, spec.replicas, Side::Minus, &mut stream(seed, &[2, n as u64])))
        .collect();
    let c_plus = c_plus_grid.last().unwrap().clone();
    let c_minus = c_minus_grid.last().unwrap().clone();

    let c_plus_extrapolated = if c_plus_grid.len() >= 2 {
        let x: Vec<f64> = spec.n_grid.iter().map(|&n| 1.0 / (n as f64).sqrt()).collect();
        let y: Vec<f64> = c_plus_grid.iter().map(|e| e.value).collect();
        linear_fit(&x, &y).map(|f| {
            let est = ConstantEstimate::new("c_plus", f.intercept, f.intercept_se.max(c_plus.se), c_plus.samples, "extrapolated in n^-1/2");
            if (f.intercept - c_plus.value).abs() > 3.0 * est.se.hypot(c_plus.se) {
                flags.push(format!(
                    "c_plus extrapolation {} differs from largest-n value {}",
                    f.intercept, c_plus.value
                ));
            }
            est
        })
    } else {
        None
    };

    let renewal = renewal_function(law, &spec.renewal_grid, spec.renewal_replicas, &mut stream(seed, &[3]))?;
    let c_r = renewal_slope(&renewal)?;
    if renewal.truncated_epochs > 0 {
        flags.push(format!("{} ladder epochs truncated and redrawn", renewal.truncated_epochs));
    }

    let mut rng = stream(seed, &[4]);
    let mean = law.mean();
    let sq: Vec<f64> = (0..spec.variance_samples)
        .map(|_| {
            let d = law.sample(&mut rng) - mean;
            d * d
        })
        .collect();
    let s = Summary::of(&sq);
    let sigma2 = ConstantEstimate::new("sigma2", s.mean, s.se(), spec.variance_samples, "sample variance");

    let value = c_r.value * c_plus.value;
    let se = value * (c_r.rel_se().powi(2) + c_plus.rel_se().powi(2)).sqrt();
    let product = ConstantEstimate::new("c_R c_plus", value, se, c_plus.samples, "product");
    let sigma2_exact = law.sigma2();
    let product_target = (2.0 / (std::f64::consts::PI * sigma2_exact)).sqrt();
    Ok(ConstantsReport {
        law: law.name(),
        c_plus_grid,
        c_minus_grid,
        c_plus,
        c_minus,
        c_plus_extrapolated,
        c_r,
        sigma2,
        sigma2_exact,
        product_rel_error: (value - product_target).abs() / product_target,
        product,
        product_target,
        renewal,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_positivity_constant_is_in_band() {
        let e = positivity_constant(&Walk1DLaw::standard_gaussian(), 10_000, 100_000, Side::Plus, &mut stream(5, &[]));
        assert!(e.value > 0.5 && e.value < 1.1, "{e:?}");
    }

    #[test]
    fn reflected_side_matches_for_symmetric_law() {
        let law = Walk1DLaw::smoothed_uniform();
        let p = positivity_constant(&law, 400, 200_000, Side::Plus, &mut stream(6, &[]));
        let m = positivity_constant(&law, 400, 200_000, Side::Minus, &mut stream(7, &[]));
        assert!(p.agrees_with(&m, 4.0), "{p:?} {m:?}");
    }
}
