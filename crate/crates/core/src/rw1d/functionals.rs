//! Limit functionals of walks conditioned to stay non-negative, estimated
//! from a pool of rejection-sampled paths, and the quadratures built on
//! them.
//!
//! Estimators that involve the last step are Rao-Blackwellised: the pool
//! keeps paths conditioned up to time `n - 1` and the final increment is
//! integrated out with the increment law's distribution function. Standard
//! errors come from a delete-one-batch jackknife over independent batches.

use serde::{Deserialize, Serialize};

use super::Walk1DLaw;
use crate::error::{Error, Result};
use crate::seed::stream;
use crate::stats::ConstantEstimate;

/// A statistic together with its delete-one-batch replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct Replicates {
    pub full: f64,
    pub loo: Vec<f64>,
}

impl Replicates {
    pub fn constant(v: f64, batches: usize) -> Self {
        Self { full: v, loo: vec![v; batches] }
    }

    /// Ratio of batch totals, `sum(num) / sum(den)`.
    pub fn ratio(num: &[f64], den: &[f64]) -> Self {
        let tn: f64 = num.iter().sum();
        let td: f64 = den.iter().sum();
        let loo = num
            .iter()
            .zip(den)
            .map(|(n, d)| if td - d > 0.0 { (tn - n) / (td - d) } else { 0.0 })
            .collect();
        Self { full: if td > 0.0 { tn / td } else { 0.0 }, loo }
    }

    pub fn se(&self) -> f64 {
        let g = self.loo.len() as f64;
        if g < 2.0 {
            return f64::NAN;
        }
        let m = self.loo.iter().sum::<f64>() / g;
        ((g - 1.0) / g * self.loo.iter().map(|x| (x - m).powi(2)).sum::<f64>()).sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { full: f(self.full), loo: self.loo.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.loo.len(), other.loo.len());
        Self {
            full: f(self.full, other.full),
            loo: self.loo.iter().zip(&other.loo).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|x| c * x)
    }

    pub fn add_scaled(&mut self, other: &Self, w: f64) {
        self.full += w * other.full;
        for (a, b) in self.loo.iter_mut().zip(&other.loo) {
            *a += w * b;
        }
    }

    pub fn estimate(&self, name: &str, samples: u64, method: &str) -> ConstantEstimate {
        ConstantEstimate::new(name, self.full, self.se(), samples, method)
    }
}

/// One accepted path: its state at time `n - 1` and the sampled last step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolPath {
    /// `S_{n-1}`
    pub prev: f64,
    /// `max_{k <= n-1} S_k`
    pub prev_max: f64,
    /// `max_{k <= n-1} (max_{i <= k} S_i - S_k)`
    pub prev_drawdown: f64,
    /// `S_n`
    pub last: f64,
    pub batch: u16,
}

impl PoolPath {
    pub fn max(&self) -> f64 {
        self.prev_max.max(self.last)
    }

    pub fn drawdown(&self) -> f64 {
        self.prev_drawdown.max(self.max() - self.last)
    }

    pub fn new_max(&self) -> bool {
        self.last > self.prev_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub n: usize,
    /// Paths must satisfy `min_{k <= n-1} S_k >= -alpha`.
    pub alpha: f64,
    /// Accepted paths in total, split evenly over the batches.
    pub accepted: usize,
    pub batches: usize,
    /// Give up when a batch has used this many attempts.
    pub max_attempts_per_batch: u64,
}

impl PoolSpec {
    pub fn new(n: usize, accepted: usize) -> Self {
        Self { n, alpha: 0.0, accepted, batches: 20, max_attempts_per_batch: u64::MAX }
    }
}

/// Rejection-sampled paths with `min_{k <= n-1} S_k >= -alpha`, sorted by
/// `S_{n-1}`, plus per-batch acceptance accounting.
#[derive(Debug, Clone)]
pub struct ConditionedPool {
    pub law: Walk1DLaw,
    pub spec: PoolSpec,
    pub seed: u64,
    pub attempts: Vec<u64>,
    pub accepted: Vec<u64>,
    pub steps: u64,
    pub paths: Vec<PoolPath>,
    /// Per-batch sums of `P(S_n >= -alpha | F_{n-1})`.
    survive: Vec<f64>,
}

impl ConditionedPool {
    pub fn sample(law: &Walk1DLaw, spec: PoolSpec, seed: u64) -> Result<Self> {
        law.validate()?;
        if spec.n < 2 || spec.batches < 2 || spec.batches > u16::MAX as usize {
            return Err(Error::InvalidArgument("pool needs n >= 2 and 2..65535 batches".into()));
        }
        let per_batch = spec.accepted.div_ceil(spec.batches).max(1);
        let mut paths = Vec::with_capacity(per_batch * spec.batches);
        let mut attempts = vec![0u64; spec.batches];
        let mut accepted = vec![0u64; spec.batches];
        let mut steps = 0u64;
        let floor = -spec.alpha;
        for b in 0..spec.batches {
            let mut rng = stream(seed, &[0x9001, b as u64]);
            while (accepted[b] as usize) < per_batch {
                if attempts[b] >= spec.max_attempts_per_batch {
                    break;
                }
                attempts[b] += 1;
                let mut s = 0.0f64;
                let mut mx = 0.0f64;
                let mut dd = 0.0f64;
                let mut ok = true;
                for k in 1..spec.n {
                    s += law.sample(&mut rng);
                    if s < floor {
                        steps += k as u64;
                        ok = false;
                        break;
                    }
                    if s > mx {
                        mx = s;
                    } else if mx - s > dd {
                        dd = mx - s;
                    }
                }
                if !ok {
                    continue;
                }
                steps += spec.n as u64;
                let last = s + law.sample(&mut rng);
                accepted[b] += 1;
                paths.push(PoolPath { prev: s, prev_max: mx, prev_drawdown: dd, last, batch: b as u16 });
            }
        }
        if paths.is_empty() {
            return Err(Error::NoAcceptedSamples {
                attempts: attempts.iter().sum(),
                reason: format!(
                    "no path of length {} stayed above {} (acceptance rate below 1/{})",
                    spec.n,
                    floor,
                    spec.max_attempts_per_batch
                ),
            });
        }
        paths.sort_by(|a, b| a.prev.total_cmp(&b.prev));
        let mut survive = vec![0.0; spec.batches];
        if !law.is_lattice() {
            for p in &paths {
                survive[p.batch as usize] += law.sf(floor - p.prev);
            }
        } else {
            for p in &paths {
                survive[p.batch as usize] += f64::from(u8::from(p.last >= floor));
            }
        }
        Ok(Self { law: law.clone(), spec, seed, attempts, accepted, steps, paths, survive })
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn batches(&self) -> usize {
        self.spec.batches
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.accepted.iter().sum::<u64>() as f64 / self.attempts.iter().sum::<u64>() as f64
    }

    fn accepted_f(&self) -> Vec<f64> {
        self.accepted.iter().map(|&a| a as f64).collect()
    }

    /// `P(min_{k <= n-1} S_k >= -alpha)` with replicates.
    pub fn p_cond(&self) -> Replicates {
        let att: Vec<f64> = self.attempts.iter().map(|&a| a as f64).collect();
        Replicates::ratio(&self.accepted_f(), &att)
    }

    /// `P(S_n >= -alpha | min_{k <= n-1} S_k >= -alpha)`.
    pub fn survive_last(&self) -> Replicates {
        Replicates::ratio(&self.survive, &self.accepted_f())
    }

    /// `sqrt(n) P(min_{k <= n} S_k >= -alpha)`; for `alpha = 0` this is the
    /// finite-`n` version of `c_+`.
    pub fn positivity(&self) -> Replicates {
        let r = (self.spec.n as f64).sqrt();
        self.p_cond().zip(&self.survive_last(), |p, q| r * p * q)
    }

    /// Pool mean of `f` over paths whose `S_{n-1}` lies in `[lo, hi]`
    /// (`f` is taken to vanish elsewhere).
    pub fn mean_over(&self, lo: f64, hi: f64, mut f: impl FnMut(&PoolPath) -> f64) -> Replicates {
        let i0 = self.paths.partition_point(|p| p.prev < lo);
        let i1 = self.paths.partition_point(|p| p.prev <= hi);
        let mut sums = vec![0.0; self.batches()];
        for p in &self.paths[i0..i1.max(i0)] {
            sums[p.batch as usize] += f(p);
        }
        Replicates::ratio(&sums, &self.accepted_f())
    }

    fn require_continuous(&self) -> Result<()> {
        if self.law.is_lattice() {
            return Err(Error::UnsupportedLaw(format!(
                "{} is a lattice law; local-limit functionals are defined for continuous laws only",
                self.law.name()
            )));
        }
        Ok(())
    }
}

/// `C_0(a, b)` from the local limit
/// `n P(min S >= 0, max S <= (a+b) sqrt n, S_n in [b sqrt n, b sqrt n + h))
///  ~ c_+ h C_0(a, b) / sigma`, with `c_+` replaced by the pool's own
/// `sqrt(n) P(min_{k<=n} S_k >= 0)`.
pub fn c0_from_pool(pool: &ConditionedPool, a: f64, b: f64, h: f64) -> Result<Replicates> {
    pool.require_continuous()?;
    if pool.spec.alpha != 0.0 {
        return Err(Error::InvalidArgument("C_0 needs a pool conditioned at alpha = 0".into()));
    }
    let batches = pool.batches();
    if !(a > 0.0 && b > 0.0 && h > 0.0) {
        return Ok(Replicates::constant(0.0, batches));
    }
    let law = &pool.law;
    let rn = (pool.spec.n as f64).sqrt();
    let top = (a + b) * rn;
    let lo = b * rn;
    let hi = (lo + h).min(top);
    if hi <= lo {
        return Ok(Replicates::constant(0.0, batches));
    }
    let reach = law.tail_reach();
    let g = pool.mean_over(lo - reach, hi + reach, |p| {
        if p.prev_max > top {
            0.0
        } else {
            law.prob_interval(lo - p.prev, hi - p.prev)
        }
    });
    let sigma = law.sigma();
    let q = pool.survive_last();
    Ok(g.zip(&q, |g, q| if q > 0.0 { sigma * rn * g / (h * q) } else { 0.0 }))
}

/// `C_{a,b} R(alpha)` as the limit of
/// `n P(min S >= -alpha, S_n > max_{k<n} S_k, max drawdown <= a sqrt n, S_n >= b sqrt n)`.
pub fn cab_from_pool(pool: &ConditionedPool, a: f64, b: f64) -> Result<Replicates> {
    pool.require_continuous()?;
    let batches = pool.batches();
    if !(a > 0.0) {
        return Ok(Replicates::constant(0.0, batches));
    }
    let law = &pool.law;
    let n = pool.spec.n as f64;
    let rn = n.sqrt();
    let dd_cap = a * rn;
    let level = b * rn;
    let reach = law.tail_reach();
    let g = pool.mean_over(level - reach, f64::INFINITY, |p| {
        if p.prev_drawdown > dd_cap {
            return 0.0;
        }
        let need = p.prev_max.max(level) - p.prev;
        if need > reach {
            0.0
        } else {
            law.sf(need)
        }
    });
    Ok(pool.p_cond().zip(&g, |p, g| n * p * g))
}

/// The window used by the local-limit estimators, `0.25 sigma` by default.
pub fn default_window(law: &Walk1DLaw) -> f64 {
    0.25 * law.sigma()
}

/// Estimate of `C_0(a, b)` from a fresh pool of `replicas` paths.
pub fn estimate_c0(law: &Walk1DLaw, a: f64, b: f64, n: usize, replicas: usize, seed: u64) -> Result<ConstantEstimate> {
    let pool = ConditionedPool::sample(law, PoolSpec::new(n, replicas), seed)?;
    let h = default_window(law);
    let full = c0_from_pool(&pool, a, b, h)?;
    let half = c0_from_pool(&pool, a, b, h / 2.0)?;
    Ok(full
        .estimate("C0", pool.len() as u64, "local-limit ratio, last step integrated")
        .with_param("a", a)
        .with_param("b", b)
        .with_param("n", n as f64)
        .with_param("h", h)
        .with_note(format!("window h/2 gives {:.6} +- {:.6}", half.full, half.se()))
        .with_note(format!("acceptance rate {:.3e}", pool.acceptance_rate())))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CabEstimate {
    /// `C_{a,b} R(alpha)`
    pub product: ConstantEstimate,
    pub renewal: ConstantEstimate,
    /// `C_{a,b}`
    pub value: ConstantEstimate,
}

/// Estimate of `C_{a,b} R(alpha)`, reported together with the renewal
/// estimate and their ratio `C_{a,b}`.
pub fn estimate_cab(
    law: &Walk1DLaw,
    a: f64,
    b: f64,
    alpha: f64,
    n: usize,
    replicas: usize,
    seed: u64,
) -> Result<CabEstimate> {
    if !(alpha >= 0.0) {
        return Err(Error::InvalidArgument("alpha must be >= 0".into()));
    }
    let spec = PoolSpec { alpha, ..PoolSpec::new(n, replicas) };
    let pool = ConditionedPool::sample(law, spec, seed)?;
    let prod = cab_from_pool(&pool, a, b)?;
    let renewal = if alpha == 0.0 {
        ConstantEstimate::new("renewal", 1.0, 0.0, 0, "continuous law")
    } else {
        let c = super::renewal_function(law, &[alpha], 2_000, &mut stream(seed, &[0x9002]))?;
        c.values[0].clone()
    };
    let value = prod.full / renewal.value;
    let se = value * (prod.se() / prod.full.abs().max(1e-300)).hypot(renewal.rel_se());
    let tag = |e: ConstantEstimate| e.with_param("a", a).with_param("b", b).with_param("alpha", alpha).with_param("n", n as f64);
    Ok(CabEstimate {
        product: tag(prod.estimate("C_ab R(alpha)", pool.len() as u64, "new-maximum limit, last step integrated")),
        renewal,
        value: tag(ConstantEstimate::new("C_ab", if value.is_finite() { value } else { 0.0 }, if se.is_finite() { se } else { 0.0 }, pool.len() as u64, "ratio to renewal")),
    })
}

/// Trapezoidal grid on a line, used for every quadrature below.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Node spacing in the integration variable.
    pub step: f64,
    /// Stop extending a tail once its estimated remainder is below this
    /// fraction of the running total.
    pub tail_tol: f64,
    /// Hard bound on nodes per tail.
    pub max_nodes: usize,
    pub window: Option<f64>,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { step: 0.25, tail_tol: 0.01, max_nodes: 400, window: None }
    }
}

/// Integral of a non-negative function over the real line by the
/// trapezoidal rule, grown outward from `center` until both tails are
/// negligible. `right_decay` is the assumed exponential rate of the upper
/// tail (the remainder past the last node is `f / right_decay`).
#[derive(Debug, Clone)]
pub struct LineIntegral {
    pub value: Replicates,
    pub nodes: Vec<(f64, f64)>,
    pub converged: bool,
    pub range: (f64, f64),
}

pub fn integrate_line(
    center: f64,
    spec: &QuadratureSpec,
    left_decay: f64,
    right_decay: f64,
    batches: usize,
    mut f: impl FnMut(f64) -> Result<Replicates>,
) -> Result<LineIntegral> {
    let h = spec.step;
    let mut total = Replicates::constant(0.0, batches);
    let mut nodes = Vec::new();
    let c = f(center)?;
    total.add_scaled(&c, h);
    nodes.push((center, c.full));
    let mut converged = true;
    let mut range = (center, center);
    for (dir, decay) in [(1.0, right_decay), (-1.0, left_decay)] {
        let mut k = 1;
        let mut small_run = 0;
        loop {
            let t = center + dir * k as f64 * h;
            let v = f(t)?;
            total.add_scaled(&v, h);
            nodes.push((t, v.full));
            let remainder = v.full / decay;
            if remainder <= spec.tail_tol * total.full.abs() {
                small_run += 1;
            } else {
                small_run = 0;
            }
            if small_run >= 2 {
                break;
            }
            if k >= spec.max_nodes {
                converged = false;
                break;
            }
            k += 1;
        }
        if dir > 0.0 {
            range.1 = center + k as f64 * h;
        } else {
            range.0 = center - k as f64 * h;
        }
    }
    nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(LineIntegral { value: total, nodes, converged, range })
}

/// `int_0^inf C_0(theta / sqrt u, (1 - theta) / sqrt u) du / u` with
/// `u = e^t`.
pub fn c0_log_integral(pool: &ConditionedPool, theta: f64, spec: &QuadratureSpec) -> Result<LineIntegral> {
    check_theta(theta)?;
    let h = spec.window.unwrap_or_else(|| default_window(&pool.law));
    let sigma = pool.law.sigma();
    // the integrand peaks where (1 - theta) / sqrt u is of order sigma
    let center = 2.0 * ((1.0 - theta) / sigma).ln();
    integrate_line(center, spec, 1.0, 0.5, pool.batches(), |t| {
        let s = (-0.5 * t).exp();
        c0_from_pool(pool, theta * s, (1.0 - theta) * s, h)
    })
}

/// `int_0^inf C_{t^{-1/2}, t^{-1/2}} dt / t` with `t = e^x`.
pub fn cab_log_integral(pool: &ConditionedPool, spec: &QuadratureSpec) -> Result<LineIntegral> {
    let sigma = pool.law.sigma();
    let center = -2.0 * sigma.ln();
    integrate_line(center, spec, 1.0, 0.5, pool.batches(), |x| {
        let s = (-0.5 * x).exp();
        cab_from_pool(pool, s, s)
    })
}

fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.0 && theta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("theta must lie in (0, 1), got {theta}")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaSpec {
    pub n: usize,
    pub pool_size: usize,
    pub batches: usize,
    pub quadrature: QuadratureSpec,
    /// Nodes of the inner `u` quadrature of `G`.
    pub g_nodes: usize,
}

impl Default for LambdaSpec {
    fn default() -> Self {
        Self { n: 10_000, pool_size: 40_000, batches: 20, quadrature: QuadratureSpec::default(), g_nodes: 32 }
    }
}

impl LambdaSpec {
    fn pool_spec(&self) -> PoolSpec {
        PoolSpec { batches: self.batches, ..PoolSpec::new(self.n, self.pool_size) }
    }
}

#[derive(Debug, Clone)]
pub struct Lambda0Result {
    pub estimate: ConstantEstimate,
    pub replicates: Replicates,
    pub integral: LineIntegral,
}

/// `Lambda_0(theta) = sqrt 2 / (sqrt pi sigma^2) int C_0(theta/sqrt u, (1-theta)/sqrt u) du/u`
/// on an existing pool.
pub fn lambda0_from_pool(pool: &ConditionedPool, theta: f64, spec: &QuadratureSpec) -> Result<Lambda0Result> {
    let integral = c0_log_integral(pool, theta, spec)?;
    let s2 = pool.law.sigma2();
    let k = (2.0 / std::f64::consts::PI).sqrt() / s2;
    let replicates = integral.value.scale(k);
    let mut estimate = replicates
        .estimate("Lambda0", pool.len() as u64, "log-u trapezoid of pooled C_0")
        .with_param("theta", theta)
        .with_param("n", pool.spec.n as f64)
        .with_param("nodes", integral.nodes.len() as f64);
    if !integral.converged {
        estimate = estimate.with_note("tail truncation did not converge");
    }
    Ok(Lambda0Result { estimate, replicates, integral })
}

pub fn lambda0(theta: f64, law: &Walk1DLaw, spec: &LambdaSpec, seed: u64) -> Result<Lambda0Result> {
    check_theta(theta)?;
    let pool = ConditionedPool::sample(law, spec.pool_spec(), seed)?;
    lambda0_from_pool(&pool, theta, &spec.quadrature)
}

/// `G(a, b) = int_0^1 C_{a/sqrt u, a/sqrt u} (c_-/sigma) C_0((a-b)/sqrt(1-u), b/sqrt(1-u)) 1{a>b} du/(u(1-u))`,
/// with `u = 1/(1 + e^{-x})` and `nodes` equally spaced `x` values on a
/// symmetric window that is widened until the end nodes are negligible.
/// `c_minus` enters as a constant factor.
pub fn g_from_pool(
    pool: &ConditionedPool,
    a: f64,
    b: f64,
    c_minus: f64,
    nodes: usize,
    h: f64,
) -> Result<(Replicates, bool)> {
    let batches = pool.batches();
    if !(a > b) || !(b > 0.0) {
        return Ok((Replicates::constant(0.0, batches), true));
    }
    let sigma = pool.law.sigma();
    let integrand = |x: f64| -> Result<Replicates> {
        let u = 1.0 / (1.0 + (-x).exp());
        let v = 1.0 - u;
        let f1 = cab_from_pool(pool, a / u.sqrt(), a / u.sqrt())?;
        let f0 = c0_from_pool(pool, (a - b) / v.sqrt(), b / v.sqrt(), h)?;
        Ok(f1.zip(&f0, |p, q| p * q * c_minus / sigma))
    };
    let nodes = nodes.max(4);
    let mut half_width = 8.0;
    for _ in 0..6 {
        let dx = 2.0 * half_width / (nodes - 1) as f64;
        let mut total = Replicates::constant(0.0, batches);
        let mut ends = 0.0;
        for i in 0..nodes {
            let x = -half_width + i as f64 * dx;
            let v = integrand(x)?;
            let w = if i == 0 || i == nodes - 1 { 0.5 * dx } else { dx };
            if i == 0 || i == nodes - 1 {
                ends += v.full.abs();
            }
            total.add_scaled(&v, w);
        }
        if ends * dx <= 0.01 * total.full.abs() || total.full == 0.0 {
            return Ok((total, true));
        }
        half_width *= 1.5;
        if half_width > 40.0 {
            return Ok((total, false));
        }
    }
    unreachable!("loop always returns")
}

pub fn estimate_g(
    law: &Walk1DLaw,
    a: f64,
    b: f64,
    nodes: usize,
    spec: &LambdaSpec,
    seed: u64,
) -> Result<ConstantEstimate> {
    if !(a > b) {
        return Ok(ConstantEstimate::new("G", 0.0, 0.0, 0, "indicator a > b vanishes").with_param("a", a).with_param("b", b));
    }
    let pool = ConditionedPool::sample(law, spec.pool_spec(), seed)?;
    let cm = super::positivity_constant(law, spec.n, 200_000, super::Side::Minus, &mut stream(seed, &[0x9003]));
    let (g, converged) = g_from_pool(&pool, a, b, cm.value, nodes, default_window(law))?;
    let mut e = g
        .estimate("G", pool.len() as u64, "logit-u trapezoid of pooled C_ab and C_0")
        .with_param("a", a)
        .with_param("b", b)
        .with_param("nodes", nodes as f64)
        .with_note(format!("c_minus = {} +- {} (treated as exact inside the quadrature)", cm.value, cm.se));
    if !converged {
        e = e.with_note("u-window did not converge");
    }
    Ok(e)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Lambda1Report {
    pub theta: f64,
    /// `c_R int G(1/sqrt s, theta/sqrt s) ds/s`
    pub route_a: ConstantEstimate,
    /// `c_R c_- (sqrt(pi) sigma / sqrt 2) Lambda_0(1-theta) int C_{t^-1/2,t^-1/2} dt/t`
    pub route_b: ConstantEstimate,
    /// Route A and route B divided by the common factor `c_R c_- / sigma`.
    pub reduced_a: ConstantEstimate,
    pub reduced_b: ConstantEstimate,
    pub joint_se: f64,
    pub agree: bool,
    pub c_r: ConstantEstimate,
    pub c_minus: ConstantEstimate,
    pub lambda0_complement: ConstantEstimate,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaReport {
    pub theta: f64,
    pub lambda0: ConstantEstimate,
    pub lambda1: Lambda1Report,
    pub lambda: ConstantEstimate,
}

/// Both routes to `Lambda_1(theta)`, each on its own independent pool.
/// `c_r` and `c_minus` are supplied by the caller (see
/// [`estimate_constants`](super::estimate_constants)).
pub fn lambda1(
    theta: f64,
    law: &Walk1DLaw,
    spec: &LambdaSpec,
    c_r: &ConstantEstimate,
    c_minus: &ConstantEstimate,
    seed: u64,
) -> Result<Lambda1Report> {
    check_theta(theta)?;
    let h = spec.quadrature.window.unwrap_or_else(|| default_window(law));
    let sigma = law.sigma();
    let mut flags = Vec::new();

    // Route A: outer trapezoid in log s of the inner G quadrature.
    let pool_a = ConditionedPool::sample(law, spec.pool_spec(), crate::seed::stream_seed(seed, &[0xA]))?;
    let outer = integrate_line(-2.0 * sigma.ln() + 1.0, &spec.quadrature, 1.0, 0.5, pool_a.batches(), |ls| {
        let a = (-0.5 * ls).exp();
        let (g, ok) = g_from_pool(&pool_a, a, theta * a, 1.0, spec.g_nodes, h)?;
        if !ok {
            return Err(Error::InsufficientData("G quadrature did not converge".into()));
        }
        Ok(g.scale(sigma))
    })?;
    if !outer.converged {
        flags.push("route A outer tail did not converge".into());
    }
    let reduced_a = outer.value.clone();

    // Route B: product of two line integrals.
    let pool_b = ConditionedPool::sample(law, spec.pool_spec(), crate::seed::stream_seed(seed, &[0xB]))?;
    let i0 = c0_log_integral(&pool_b, 1.0 - theta, &spec.quadrature)?;
    let i1 = cab_log_integral(&pool_b, &spec.quadrature)?;
    if !(i0.converged && i1.converged) {
        flags.push("route B tail did not converge".into());
    }
    let reduced_b = i0.value.zip(&i1.value, |x, y| x * y);

    let common = c_r.value * c_minus.value / sigma;
    let common_rel = c_r.rel_se().hypot(c_minus.rel_se());
    let mk = |name: &str, r: &Replicates, samples: u64, method: &str| {
        let v = common * r.full;
        let se = v.abs() * (r.se() / r.full.abs()).hypot(common_rel);
        ConstantEstimate::new(name, v, se, samples, method).with_param("theta", theta)
    };
    let route_a = mk("Lambda1", &reduced_a, pool_a.len() as u64, "route A: iterated G quadrature");
    let route_b = mk("Lambda1", &reduced_b, pool_b.len() as u64, "route B: product formula");
    let l0c = i0.value.scale((2.0 / std::f64::consts::PI).sqrt() / (sigma * sigma));
    let joint_se = reduced_a.se().hypot(reduced_b.se());
    let agree = (reduced_a.full - reduced_b.full).abs() <= 3.0 * joint_se;
    if !agree {
        flags.push(format!(
            "route disagreement: reduced A = {} B = {} joint se = {}",
            reduced_a.full, reduced_b.full, joint_se
        ));
    }
    Ok(Lambda1Report {
        theta,
        route_a,
        route_b,
        reduced_a: reduced_a.estimate("Lambda1 / (c_R c_- / sigma)", pool_a.len() as u64, "route A reduced"),
        reduced_b: reduced_b.estimate("Lambda1 / (c_R c_- / sigma)", pool_b.len() as u64, "route B reduced"),
        joint_se,
        agree,
        c_r: c_r.clone(),
        c_minus: c_minus.clone(),
        lambda0_complement: l0c.estimate("Lambda0", pool_b.len() as u64, "route B pool").with_param("theta", 1.0 - theta),
        flags,
    })
}

/// `Lambda(theta) = Lambda_0(theta) + Lambda_1(theta)`, using route B for
/// `Lambda_1`.
pub fn assemble_lambda(theta: f64, lambda0: &ConstantEstimate, lambda1: Lambda1Report) -> LambdaReport {
    let l1 = &lambda1.route_b;
    let lambda = ConstantEstimate::new("Lambda", lambda0.value + l1.value, lambda0.se.hypot(l1.se), lambda0.samples + l1.samples, "Lambda0 + Lambda1")
        .with_param("theta", theta);
    LambdaReport { theta, lambda0: lambda0.clone(), lambda1, lambda }
}

/// `E[g(H_m)]` with `H_m = sum_{i<=m} e^{-S_i}` along paths conditioned on
/// `min_{k<=n} S_k >= 0`, for `g(t) = e^{-1/t}` and both `m` and `2m`.
pub fn h_infinity_proxy(law: &Walk1DLaw, m: usize, n: usize, replicas: usize, seed: u64) -> Result<(ConstantEstimate, ConstantEstimate)> {
    if n < 2 * m {
        return Err(Error::InvalidArgument("need n >= 2m".into()));
    }
    let mut rng = stream(seed, &[0x9004]);
    let mut gm = Vec::with_capacity(replicas);
    let mut g2m = Vec::with_capacity(replicas);
    let mut attempts = 0u64;
    while gm.len() < replicas {
        attempts += 1;
        let mut s = 0.0f64;
        let mut h = 1.0f64;
        let mut hm = 0.0;
        let mut ok = true;
        for k in 1..=n {
            s += law.sample(&mut rng);
            if s < 0.0 {
                ok = false;
                break;
            }
            if k <= 2 * m {
                h += (-s).exp();
            }
            if k == m {
                hm = h;
            }
        }
        if ok {
            gm.push((-1.0 / hm).exp());
            g2m.push((-1.0 / h).exp());
        }
    }
    let a = crate::stats::Summary::of(&gm);
    let b = crate::stats::Summary::of(&g2m);
    Ok((
        ConstantEstimate::new("E[g(H)]", a.mean, a.se(), attempts, "truncated at m").with_param("m", m as f64),
        ConstantEstimate::new("E[g(H)]", b.mean, b.se(), attempts, "truncated at 2m").with_param("m", 2.0 * m as f64),
    ))
}
