use serde::{Deserialize, Serialize};

use super::Walk1DLaw;
use crate::error::{Error, Result};
use crate::seed::SimRng;
use crate::stats::{linear_fit, ConstantEstimate, Summary};

/// Default step budget for a single ladder epoch.
pub const LADDER_STEP_CAP: u64 = 1_000_000;

/// Walks from 0 until the first strict new minimum and returns its height
/// (a negative number) together with the number of steps used, or `None`
/// when the budget ran out first.
pub fn sample_ladder_height(law: &Walk1DLaw, rng: &mut SimRng, cap: u64) -> (Option<f64>, u64) {
    let mut s = 0.0;
    for k in 1..=cap {
        s += law.sample(rng);
        if s < 0.0 {
            return (Some(s), k);
        }
    }
    (None, cap)
}

/// Renewal function estimates on a grid of levels, all taken from the same
/// ladder processes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RenewalCurve {
    pub u_grid: Vec<f64>,
    pub values: Vec<ConstantEstimate>,
    pub replicas: u64,
    /// Ladder epochs that hit the step budget; they are dropped and redrawn.
    pub truncated_epochs: u64,
    pub steps: u64,
    /// Per-replica counts, one row per replica, kept for slope fits.
    #[serde(skip)]
    counts: Vec<Vec<u32>>,
}

/// `R(u) = sum_k P(S_k < min_{j<k} S_j, S_k >= -u)`, the `k = 0` term
/// included, for every `u` of an ascending grid. Each replica runs the
/// ladder-height renewal process until it leaves `[-max u, 0]`.
pub fn renewal_function(
    law: &Walk1DLaw,
    u_grid: &[f64],
    replicas: u64,
    rng: &mut SimRng,
) -> Result<RenewalCurve> {
    if u_grid.iter().any(|&u| !(u >= 0.0)) {
        return Err(Error::InvalidArgument("renewal levels must be >= 0".into()));
    }
    if u_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("renewal levels must be ascending".into()));
    }
    if replicas < 2 {
        return Err(Error::InvalidArgument("need at least 2 replicas".into()));
    }
    let umax = u_grid.last().copied().unwrap_or(0.0);
    let mut counts = Vec::with_capacity(replicas as usize);
    let mut truncated = 0u64;
    let mut steps = 0u64;
    for _ in 0..replicas {
        let mut c = vec![1u32; u_grid.len()];
        let mut level = 0.0;
        loop {
            let h = loop {
                let (h, k) = sample_ladder_height(law, rng, LADDER_STEP_CAP);
                steps += k;
                match h {
                    Some(h) => break h,
                    None => truncated += 1,
                }
            };
            level += h;
            if level < -umax {
                break;
            }
            // levels are ascending, so the grid points reached form a suffix
            let first = u_grid.partition_point(|&u| level < -u);
            for ci in &mut c[first..] {
                *ci += 1;
            }
        }
        counts.push(c);
    }
    let values = (0..u_grid.len())
        .map(|j| {
            let xs: Vec<f64> = counts.iter().map(|c| c[j] as f64).collect();
            let s = Summary::of(&xs);
            ConstantEstimate::new("renewal", s.mean, s.se(), replicas, "ladder-renewal-mc")
                .with_param("u", u_grid[j])
        })
        .collect();
    Ok(RenewalCurve { u_grid: u_grid.to_vec(), values, replicas, truncated_epochs: truncated, steps, counts })
}

/// `c_R` as the slope of `R(u)` against `u` over the curve's grid. The
/// slope is fitted replica by replica, so its standard error reflects the
/// common random numbers across the grid.
pub fn renewal_slope(curve: &RenewalCurve) -> Result<ConstantEstimate> {
    if curve.u_grid.len() < 2 || curve.counts.is_empty() {
        return Err(Error::InsufficientData("slope needs two levels and raw counts".into()));
    }
    let slopes: Vec<f64> = curve
        .counts
        .iter()
        .map(|c| {
            let y: Vec<f64> = c.iter().map(|&v| v as f64).collect();
            linear_fit(&curve.u_grid, &y).map(|f| f.slope).unwrap_or(f64::NAN)
        })
        .collect();
    let s = Summary::of(&slopes);
    Ok(ConstantEstimate::new("c_R", s.mean, s.se(), curve.replicas, "renewal-slope")
        .with_param("u_min", curve.u_grid[0])
        .with_param("u_max", *curve.u_grid.last().unwrap())
        .with_note(format!("{} truncated ladder epochs redrawn", curve.truncated_epochs)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream;

    #[test]
    fn continuous_law_has_unit_renewal_at_zero() {
        let c = renewal_function(&Walk1DLaw::standard_gaussian(), &[0.0, 1.0], 500, &mut stream(1, &[]))
            .unwrap();
        assert_eq!(c.values[0].value, 1.0);
        assert_eq!(c.values[0].se, 0.0);
        assert!(c.values[1].value > 1.0);
    }

    #[test]
    fn rademacher_renewal_counts_lattice_levels() {
        let c = renewal_function(&Walk1DLaw::Rademacher, &[0.0, 2.5, 7.0], 50, &mut stream(2, &[]))
            .unwrap();
        let v: Vec<f64> = c.values.iter().map(|e| e.value).collect();
        assert_eq!(v, vec![1.0, 3.0, 8.0]);
    }

    #[test]
    fn renewal_is_nondecreasing() {
        let grid: Vec<f64> = (0..=10).map(|k| k as f64 * 2.0).collect();
        let c = renewal_function(&Walk1DLaw::uniform_with_sigma(1.0), &grid, 400, &mut stream(3, &[]))
            .unwrap();
        for w in c.values.windows(2) {
            assert!(w[1].value >= w[0].value);
        }
        let slope = renewal_slope(&c).unwrap();
        assert!(slope.within(2f64.sqrt(), 5.0), "{slope:?}");
    }
}
