//! One-dimensional centred random walks: increment laws, path summaries,
//! the renewal function of the strict descending ladder process, the
//! constants `c_+`, `c_-`, `c_R`, conditioned-walk functionals and the
//! probe harness for the classical fluctuation inequalities.

mod constants;
mod functionals;
mod law;
mod probes;
mod renewal;

pub use constants::{estimate_constants, positivity_constant, ConstantsReport, ConstantsSpec, Side};
pub use functionals::*;
pub use law::Walk1DLaw;
pub use probes::*;
pub use renewal::{renewal_function, renewal_slope, sample_ladder_height, RenewalCurve};

use serde::{Deserialize, Serialize};

use crate::seed::SimRng;

/// One-pass summary of a path `S_0 = 0, S_1, ..., S_n`. The weighted sums
/// are kept on the log scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathSummary {
    pub n: usize,
    pub s: f64,
    pub max: f64,
    pub min: f64,
    pub argmax: usize,
    /// `max_{k <= n} (max_{i <= k} S_i - S_k)`
    pub max_drawdown: f64,
    /// `log sum_{i=0}^n e^{-S_i}`
    pub log_sum_exp_neg: f64,
    /// `log sum_{i=0}^n e^{S_i - max S}`
    pub log_sum_exp_to_max: f64,
    /// `log H_n = log sum_{k=0}^n e^{S_k - S_n}`
    pub log_h: f64,
}

#[inline]
pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Simulates `n` steps and summarises the path.
pub fn simulate_walk(law: &Walk1DLaw, n: usize, rng: &mut SimRng) -> PathSummary {
    let mut s = 0.0f64;
    let mut max = 0.0f64;
    let mut min = 0.0f64;
    let mut argmax = 0usize;
    let mut dd = 0.0f64;
    let mut lse_neg = 0.0f64;
    let mut lse_pos = 0.0f64;
    let mut log_h = 0.0f64;
    for k in 1..=n {
        let xi = law.sample(rng);
        s += xi;
        if s > max {
            max = s;
            argmax = k;
        }
        min = min.min(s);
        dd = dd.max(max - s);
        lse_neg = log_add(lse_neg, -s);
        lse_pos = log_add(lse_pos, s);
        log_h = log_add(0.0, log_h - xi);
    }
    PathSummary {
        n,
        s,
        max,
        min,
        argmax,
        max_drawdown: dd,
        log_sum_exp_neg: lse_neg,
        log_sum_exp_to_max: lse_pos - max,
        log_h,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream;

    #[test]
    fn empty_path() {
        let p = simulate_walk(&Walk1DLaw::standard_gaussian(), 0, &mut stream(1, &[]));
        assert_eq!((p.s, p.max, p.min), (0.0, 0.0, 0.0));
        assert_eq!(p.log_h, 0.0);
        assert_eq!(p.log_sum_exp_neg, 0.0);
    }

    #[test]
    fn weighted_sums_match_direct_computation() {
        let law = Walk1DLaw::standard_gaussian();
        let mut rng = stream(2, &[]);
        let mut rng2 = rng.clone();
        let p = simulate_walk(&law, 60, &mut rng);
        let mut path = vec![0.0];
        for _ in 0..60 {
            let xi = law.sample(&mut rng2);
            path.push(path.last().unwrap() + xi);
        }
        let sn = *path.last().unwrap();
        let max = path.iter().copied().fold(f64::MIN, f64::max);
        let h: f64 = path.iter().map(|s| (s - sn).exp()).sum();
        let neg: f64 = path.iter().map(|s| (-s).exp()).sum();
        let pos: f64 = path.iter().map(|s| (s - max).exp()).sum();
        assert!((p.log_h - h.ln()).abs() < 1e-12);
        assert!((p.log_sum_exp_neg - neg.ln()).abs() < 1e-12);
        assert!((p.log_sum_exp_to_max - pos.ln()).abs() < 1e-12);
        assert_eq!(p.max, max);
    }

    #[test]
    fn rademacher_two_steps_stay_nonnegative_half_the_time() {
        let law = Walk1DLaw::Rademacher;
        let mut rng = stream(3, &[]);
        let reps = 200_000;
        let hits = (0..reps).filter(|_| simulate_walk(&law, 2, &mut rng).min >= 0.0).count();
        let p = hits as f64 / reps as f64;
        assert!((p - 0.5).abs() < 4.0 * (0.25f64 / reps as f64).sqrt());
    }
}
