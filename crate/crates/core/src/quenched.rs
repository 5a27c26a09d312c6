//! Exact quenched laws: hitting and continuation probabilities of an
//! edge, local-time laws of one and of `n` excursions, sums of
//! zero-inflated geometric variables, and a linear solver used as an
//! independent oracle for the path formula of `a_x`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::env::{Environment, NodeId};
use crate::error::{Error, Result};
use crate::observables::PathStats;
use crate::stats::{linear_fit, log_sum_exp};

/// Target for the mass left beyond the cap of a geometric-sum table.
pub const GEO_TAIL_TARGET: f64 = 1e-12;
/// Largest system [`absorption_solve`] accepts.
pub const ABSORPTION_MAX_NODES: usize = 4_000;

/// Law of the edge local time `(x*, x)` during one excursion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeLaw {
    /// `P_rho(T_x < T_{rho*})`
    pub a: f64,
    /// Probability of returning to `x` from `x*` before `rho*`.
    pub b: f64,
    /// `H_x`
    pub h: f64,
    pub log_a: f64,
}

impl EdgeLaw {
    /// Law with given `a` and `b`, `H` recovered from `b = 1 - 1/H`.
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && a < 1.0 && (0.0..1.0).contains(&b)) {
            return Err(Error::InvalidArgument(format!("need a in (0,1), b in [0,1); got ({a}, {b})")));
        }
        Ok(Self { a, b, h: 1.0 / (1.0 - b), log_a: a.ln() })
    }

    /// `ln(1 - a)`
    fn log_miss(&self) -> f64 {
        (-self.a).ln_1p()
    }
}

/// `a = e^{-V}/H`, `b = 1 - 1/H`.
pub fn edge_law(stats: &PathStats) -> EdgeLaw {
    let log_a = -stats.v - stats.log_h;
    EdgeLaw { a: log_a.exp(), b: -(-stats.log_h).exp_m1(), h: stats.h, log_a }
}

/// `P_rho(T_x < T_{rho*})` for every target, from the harmonic system on
/// the realized part of `env`.
///
/// Unrealized nodes are treated as reflecting (the walk returns to the
/// parent surely). Hitting probabilities only depend on the conductances
/// along the path to the target, so this is exact as long as the target
/// and its ancestors are realized.
pub fn absorption_solve(env: &Environment, targets: &[NodeId]) -> Result<BTreeMap<NodeId, f64>> {
    let n = env.len();
    if n > ABSORPTION_MAX_NODES {
        return Err(Error::InvalidArgument(format!(
            "absorption solve limited to {ABSORPTION_MAX_NODES} nodes, environment has {n}"
        )));
    }
    let probs: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let x = NodeId(i as u32);
            if env.is_realized(x) {
                env.transition_probs_realized(x)
            } else {
                vec![1.0]
            }
        })
        .collect();
    let mut out = BTreeMap::new();
    for &target in targets {
        if !env.contains(target) {
            return Err(Error::UnknownNode(target));
        }
        let t = target.index();
        let mut m = DMatrix::<f64>::zeros(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
            if i == t {
                rhs[i] = 1.0;
                continue;
            }
            let x = NodeId(i as u32);
            let p = &probs[i];
            if i != 0 {
                m[(i, env.parent(x).index())] -= p[0];
            }
            if env.is_realized(x) {
                for (c, &pc) in env.children(x).iter().zip(&p[1..]) {
                    m[(i, c.index())] -= pc;
                }
            }
        }
        let sol = m
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::SingularSystem(format!("target {target}")))?;
        if !sol.iter().all(|v| v.is_finite()) {
            return Err(Error::SingularSystem(format!("non-finite solution for target {target}")));
        }
        out.insert(target, sol[0]);
    }
    Ok(out)
}

/// The one-excursion law in the form `P(L = 0) = 1 - a` for `k = 0` and
/// `P(L >= k) = a b^{k-1}` for `k >= 1`.
pub fn single_excursion_law(law: &EdgeLaw, k: u64) -> f64 {
    if k == 0 {
        1.0 - law.a
    } else {
        single_excursion_tail(law, k)
    }
}

/// `P(L >= k)`
pub fn single_excursion_tail(law: &EdgeLaw, k: u64) -> f64 {
    if k == 0 {
        1.0
    } else {
        (law.log_a + (k - 1) as f64 * law.b.ln()).exp()
    }
}

/// `P(L = k)`
pub fn single_excursion_pmf(law: &EdgeLaw, k: u64) -> f64 {
    if k == 0 {
        1.0 - law.a
    } else {
        single_excursion_tail(law, k) * (1.0 - law.b)
    }
}

/// `ln P(L(tau_n) >= k, E^{(n)} = 1) = ln(n a (1-a)^{n-1} b^{k-1})`.
pub fn log_one_excursion_heavy_prob(n: u64, k: u64, law: &EdgeLaw) -> f64 {
    assert!(n >= 1 && k >= 1, "n and k must be at least 1");
    let lb = if k == 1 { 0.0 } else { (k - 1) as f64 * law.b.ln() };
    (n as f64).ln() + law.log_a + (n - 1) as f64 * law.log_miss() + lb
}

pub fn one_excursion_heavy_prob(n: u64, k: u64, law: &EdgeLaw) -> f64 {
    log_one_excursion_heavy_prob(n, k, law).exp()
}

fn ln_choose(n: u64, k: u64) -> f64 {
    if k == 0 || k == n {
        return 0.0;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// `ln P(Bin(n, p) = k)` with `ln p` and `ln(1-p)` supplied.
fn ln_binom_pmf(n: u64, k: u64, lp: f64, lq: f64) -> f64 {
    let a = if k == 0 { 0.0 } else { k as f64 * lp };
    let b = if k == n { 0.0 } else { (n - k) as f64 * lq };
    ln_choose(n, k) + a + b
}

/// `ln P(G_1 + ... + G_m >= t)` for i.i.d. geometric `G` on `{1, 2, ..}`
/// with `P(G >= k) = b^{k-1}`: at least `t` trials are needed for `m`
/// successes iff fewer than `m` successes occur in `t - 1` trials.
fn ln_negbin_tail(m: u64, t: u64, b: f64) -> f64 {
    if t <= m {
        return 0.0;
    }
    if b == 0.0 {
        return f64::NEG_INFINITY;
    }
    let trials = t - 1;
    let lp = (-b).ln_1p();
    let lq = b.ln();
    log_sum_exp((0..m.min(trials + 1)).map(|i| ln_binom_pmf(trials, i, lp, lq)))
}

/// `P(L(tau_n) >= k, E^{(n)} = j)` for `j = 0..=n`: given `j` visiting
/// excursions the local time is a sum of `j` geometric variables.
pub fn heavy_by_visits(n: u64, k: u64, law: &EdgeLaw) -> Vec<f64> {
    let k = k.max(1);
    let (lp, lq) = (law.log_a, law.log_miss());
    (0..=n)
        .map(|j| {
            if j == 0 {
                0.0
            } else {
                (ln_binom_pmf(n, j, lp, lq) + ln_negbin_tail(j, k, law.b)).exp()
            }
        })
        .collect()
}

/// Same quantity as [`heavy_by_visits`] by dynamic programming over the
/// excursions, tracking the local time capped at `k` and the visit count.
pub fn heavy_by_visits_dp(n: u64, k: u64, law: &EdgeLaw) -> Vec<f64> {
    let k = k.max(1) as usize;
    let n = n as usize;
    // One-excursion law with local time capped at k.
    let mut single = vec![0.0; k + 1];
    for (l, s) in single.iter_mut().enumerate().take(k) {
        *s = single_excursion_pmf(law, l as u64);
    }
    single[k] = single_excursion_tail(law, k as u64);
    // state[j][l]: j visiting excursions so far, capped local time l.
    let mut state = vec![vec![0.0; k + 1]; n + 1];
    state[0][0] = 1.0;
    for step in 0..n {
        let mut next = vec![vec![0.0; k + 1]; n + 1];
        for j in 0..=step {
            for l in 0..=k {
                let p = state[j][l];
                if p == 0.0 {
                    continue;
                }
                next[j][l] += p * single[0];
                for (dl, &q) in single.iter().enumerate().skip(1) {
                    next[j + 1][(l + dl).min(k)] += p * q;
                }
            }
        }
        state = next;
    }
    state.iter().map(|row| row[k]).collect()
}

/// Distribution of `zeta_1 + ... + zeta_n` for i.i.d. zero-inflated
/// geometric summands, `P(zeta = 0) = 1 - a`, `P(zeta >= k) = a b^{k-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoSumDistribution {
    pub n: u64,
    pub a: f64,
    pub b: f64,
    /// `P(sum = s)` for `s = 0..=cap`.
    pub probs: Vec<f64>,
    /// `P(sum > cap)`, accumulated exactly during the convolution.
    pub tail: f64,
}

impl GeoSumDistribution {
    pub fn cap(&self) -> usize {
        self.probs.len() - 1
    }

    /// `P(sum >= t)`; the stored tail is included when `t` exceeds the cap.
    pub fn tail_from(&self, t: usize) -> f64 {
        let inside: f64 = self.probs.iter().skip(t).sum();
        inside + self.tail
    }

    /// `P(sum <= s)`
    pub fn cdf(&self, s: usize) -> f64 {
        self.probs.iter().take(s + 1).sum()
    }

    pub fn mass(&self) -> f64 {
        self.probs.iter().sum::<f64>() + self.tail
    }
}

fn validate_ab(a: f64, b: f64) -> Result<()> {
    if !((0.0..=1.0).contains(&a) && (0.0..1.0).contains(&b)) {
        return Err(Error::InvalidArgument(format!("need a in [0,1], b in [0,1); got ({a}, {b})")));
    }
    Ok(())
}

/// The single-summand table on `0..=cap` and its mass beyond the cap.
pub fn geo_single(a: f64, b: f64, cap: usize) -> GeoSumDistribution {
    let mut probs = vec![0.0; cap + 1];
    probs[0] = 1.0 - a;
    let mut t = a;
    for p in probs.iter_mut().skip(1) {
        *p = t * (1.0 - b);
        t *= b;
    }
    GeoSumDistribution { n: 1, a, b, probs, tail: t }
}

/// Truncated convolution of two tables on a common cap. Mass beyond the
/// cap is added to the tail: each pair `(i, j)` with `i + j > cap` is
/// accounted for through the partial tail sums of `q`.
pub fn convolve(p: &GeoSumDistribution, q: &GeoSumDistribution) -> GeoSumDistribution {
    let cap = p.cap().min(q.cap());
    let mut probs = vec![0.0; cap + 1];
    // q_tail[j] = P_q(> j)
    let mut q_tail = vec![0.0; cap + 1];
    let mut acc = q.tail;
    for j in (0..=cap).rev() {
        q_tail[j] = acc;
        acc += q.probs[j];
    }
    let mut tail = p.tail;
    for (i, &pi) in p.probs.iter().enumerate().take(cap + 1) {
        if pi == 0.0 {
            continue;
        }
        for (j, &qj) in q.probs.iter().enumerate().take(cap + 1 - i) {
            probs[i + j] += pi * qj;
        }
        tail += pi * q_tail[cap - i];
    }
    GeoSumDistribution { n: p.n + q.n, a: p.a, b: p.b, probs, tail }
}

/// Cap suggested by the geometric bound `n a b^cap / (1 - b)`.
pub fn suggested_cap(n: u64, a: f64, b: f64) -> usize {
    let na = n as f64 * a;
    if b == 0.0 || na == 0.0 {
        return n as usize;
    }
    let c = (GEO_TAIL_TARGET * (1.0 - b) / na).ln() / b.ln();
    c.max(n as f64 * a / (1.0 - b)).ceil().max(1.0) as usize
}

/// Exact table of the sum of `n` summands by sequential convolution of
/// the single-summand table. With `cap = None` the cap starts at
/// [`suggested_cap`] and doubles until the tail mass is below
/// [`GEO_TAIL_TARGET`]; an explicit cap is used as given and whatever
/// mass lies beyond it is reported in `tail`.
pub fn geo_sum_distribution(n: u64, a: f64, b: f64, cap: Option<usize>) -> Result<GeoSumDistribution> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    validate_ab(a, b)?;
    let build = |cap: usize| {
        let single = geo_single(a, b, cap);
        let mut acc = single.clone();
        for _ in 1..n {
            acc = convolve(&acc, &single);
        }
        acc
    };
    match cap {
        Some(c) => Ok(build(c)),
        None => {
            let mut c = suggested_cap(n, a, b);
            loop {
                let d = build(c);
                if d.tail < GEO_TAIL_TARGET || c > 1 << 22 {
                    return Ok(d);
                }
                c *= 2;
            }
        }
    }
}

/// The same law in closed form: the number of non-zero summands is
/// `Bin(n, a)` and given `m` of them the sum is negative binomial.
pub fn geo_sum_mixture(n: u64, a: f64, b: f64, cap: usize) -> Result<Vec<f64>> {
    validate_ab(a, b)?;
    let mut out = vec![0.0; cap + 1];
    if a == 0.0 {
        out[0] = 1.0;
        return Ok(out);
    }
    let (lp, lq) = (a.ln(), (-a).ln_1p());
    out[0] = (n as f64 * lq).exp();
    let lnb = b.ln();
    let ln1b = (-b).ln_1p();
    for (s, o) in out.iter_mut().enumerate().skip(1) {
        let s = s as u64;
        let terms = (1..=n.min(s)).map(|m| {
            let rest = if s == m { 0.0 } else { (s - m) as f64 * lnb };
            ln_binom_pmf(n, m, lp, lq) + ln_choose(s - 1, m - 1) + m as f64 * ln1b + rest
        });
        *o = log_sum_exp(terms).exp();
    }
    Ok(out)
}

/// `ln P(sum >= t)` and `ln P(sum >= t, at least two non-zero summands)`
/// in closed form. Terms are dropped once the binomial weight of the
/// number of non-zero summands falls below `e^{-745}`.
pub fn log_geo_sum_tail(n: u64, a: f64, b: f64, t: u64) -> (f64, f64) {
    let (lp, lq) = (a.ln(), (-a).ln_1p());
    let mut all = Vec::new();
    let mut multi = Vec::new();
    let peak = ((n as f64) * a).ceil() as u64;
    for m in 1..=n {
        let w = ln_binom_pmf(n, m, lp, lq);
        if m > peak && w < -745.0 {
            break;
        }
        let term = w + ln_negbin_tail(m, t, b);
        all.push(term);
        if m >= 2 {
            multi.push(term);
        }
    }
    let all = if t == 0 { 0.0 } else { log_sum_exp(all) };
    (all, log_sum_exp(multi))
}

/// Joint table of the sum and the number of non-zero summands (0, 1 or
/// at least 2): `out[c][s]`. Cross-checks [`log_geo_sum_tail`] for the
/// multi-summand event.
pub fn geo_sum_joint(n: u64, a: f64, b: f64, cap: usize) -> Result<[Vec<f64>; 3]> {
    validate_ab(a, b)?;
    let single = geo_single(a, b, cap);
    let mut state = [vec![0.0; cap + 1], vec![0.0; cap + 1], vec![0.0; cap + 1]];
    state[0][0] = 1.0;
    for _ in 0..n {
        let mut next = [vec![0.0; cap + 1], vec![0.0; cap + 1], vec![0.0; cap + 1]];
        for c in 0..3 {
            for s in 0..=cap {
                let p = state[c][s];
                if p == 0.0 {
                    continue;
                }
                next[c][s] += p * single.probs[0];
                let c2 = (c + 1).min(2);
                for (d, &q) in single.probs.iter().enumerate().skip(1).take(cap - s) {
                    next[c2][s + d] += p * q;
                }
            }
        }
        state = next;
    }
    Ok(state)
}

/// One evaluation of a geometric-sum inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoSumCheck {
    pub kind: String,
    pub n: u64,
    pub a: f64,
    pub b: f64,
    /// `A` for the lower tail, the threshold `t` for the upper tails.
    pub level: f64,
    /// `lambda` for the lower tail, `eta` for the upper tails.
    pub parameter: f64,
    pub precondition_met: bool,
    pub log_p: Option<f64>,
    /// Right-hand side (lower tail) or implied constant (upper tails).
    pub value: Option<f64>,
    pub holds: Option<bool>,
    pub skip_reason: Option<String>,
}

/// Exact check of `P(sum <= A) <= exp(-lambda (n a / (1 + lambda) - (1 - b) A))`.
pub fn check_lower_tail(n: u64, a: f64, b: f64, level: f64, lambda: f64) -> Result<GeoSumCheck> {
    let mut out = GeoSumCheck {
        kind: "lower-tail".into(),
        n,
        a,
        b,
        level,
        parameter: lambda,
        precondition_met: lambda > 0.0 && lambda < 1.0 && level >= 0.0,
        log_p: None,
        value: None,
        holds: None,
        skip_reason: None,
    };
    if !out.precondition_met {
        out.skip_reason = Some(format!("need lambda in (0,1) and A >= 0, got lambda={lambda}, A={level}"));
        return Ok(out);
    }
    let cap = level.floor() as usize;
    let d = geo_sum_distribution(n, a, b, Some(cap))?;
    let p = d.cdf(cap);
    let log_bound = -lambda * (n as f64 * a / (1.0 + lambda) - (1.0 - b) * level);
    out.log_p = Some(p.ln());
    out.value = Some(log_bound.exp());
    out.holds = Some(p.ln() <= log_bound);
    Ok(out)
}

/// Implied constants `c = -ln(P / (2 n a)) / (t (1 - b))` for the upper
/// tail and `-ln(P_2 / (2 (n a)^2)) / (t (1 - b))` for the event with at
/// least two non-zero summands. Skipped unless `t (1 - b) >= (1 + eta) n a`.
pub fn check_upper_tail(n: u64, a: f64, b: f64, t: f64, eta: f64) -> [GeoSumCheck; 2] {
    let na = n as f64 * a;
    let x = t * (1.0 - b);
    let pre = eta > 0.0 && x >= (1.0 + eta) * na;
    let mk = |kind: &str| GeoSumCheck {
        kind: kind.into(),
        n,
        a,
        b,
        level: t,
        parameter: eta,
        precondition_met: pre,
        log_p: None,
        value: None,
        holds: None,
        skip_reason: if pre {
            None
        } else {
            Some(format!("t(1-b) = {x:.4} < (1+eta) n a = {:.4}", (1.0 + eta) * na))
        },
    };
    let mut out = [mk("upper-tail"), mk("upper-tail-multi")];
    if !pre {
        return out;
    }
    let (lp, lp2) = log_geo_sum_tail(n, a, b, t.ceil() as u64);
    let c1 = -(lp - (2.0 * na).ln()) / x;
    let c2 = -(lp2 - (2.0 * na * na).ln()) / x;
    out[0].log_p = Some(lp);
    out[0].value = Some(c1);
    out[0].holds = Some(c1 > 0.0);
    out[1].log_p = Some(lp2);
    out[1].value = Some(c2);
    out[1].holds = Some(c2 > 0.0);
    out
}

/// Trend of implied constants along an `n` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpliedConstantTrend {
    pub kind: String,
    pub exponents: (f64, f64, f64),
    pub checks: Vec<GeoSumCheck>,
    /// Slope of `ln c` against `ln n` over the evaluated points.
    pub slope: Option<f64>,
    pub positive: bool,
}

/// Evaluates the upper-tail constants on the grid `a = n^pa`,
/// `b = 1 - n^pb`, `t = n^pt`.
pub fn implied_constant_trend(ns: &[u64], pa: f64, pb: f64, pt: f64, eta: f64) -> [ImpliedConstantTrend; 2] {
    let mut single = Vec::new();
    let mut multi = Vec::new();
    for &n in ns {
        let nf = n as f64;
        let [c1, c2] = check_upper_tail(n, nf.powf(pa), 1.0 - nf.powf(pb), nf.powf(pt), eta);
        single.push(c1);
        multi.push(c2);
    }
    let summarize = |kind: &str, checks: Vec<GeoSumCheck>| {
        let pts: Vec<(f64, f64)> = checks
            .iter()
            .filter_map(|c| c.value.map(|v| ((c.n as f64).ln(), v)))
            .collect();
        let positive = !pts.is_empty() && pts.iter().all(|p| p.1 > 0.0);
        let slope = if pts.len() >= 2 && positive {
            let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
            linear_fit(&x, &y).map(|f| f.slope)
        } else {
            None
        };
        ImpliedConstantTrend { kind: kind.into(), exponents: (pa, pb, pt), checks, slope, positive }
    };
    [summarize("upper-tail", single), summarize("upper-tail-multi", multi)]
}

/// The 27-point lower-tail grid: `n` in {10, 100, 1000}, `a` in
/// {0.01, 0.1, 0.5}, `b` in {0.1, 0.5, 0.9}, `A = floor(n a / 2)` and
/// `lambda = 0.5`.
pub fn lower_tail_grid() -> Result<Vec<GeoSumCheck>> {
    let mut out = Vec::new();
    for n in [10u64, 100, 1000] {
        for a in [0.01, 0.1, 0.5] {
            for b in [0.1, 0.5, 0.9] {
                let level = (n as f64 * a / 2.0).floor();
                out.push(check_lower_tail(n, a, b, level, 0.5)?);
            }
        }
    }
    Ok(out)
}
