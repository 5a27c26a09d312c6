//! Statistics read off a finished walk or a frozen environment: heavy
//! ranges, path functionals, barrier sets, the stopping line and the two
//! martingales of the branching random walk.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::env::{Environment, NodeId};
use crate::error::{Error, Result};
use crate::seed::{stream, SimRng};
use crate::walker::WalkRecord;

/// Generation cutoff constant in `c0 (log n)^3`.
pub const DEFAULT_C0: f64 = 20.0;
/// `a` in `a_n = a log log n`.
pub const DEFAULT_A: f64 = 4.0;
/// `gamma` in `gamma_n = n / (log n)^gamma`.
pub const DEFAULT_GAMMA: f64 = 5.0;
/// Horizon `M` of the `D_M` proxy for `D_infinity`.
pub const DEFAULT_HORIZON: u32 = 25;

/// The heavy-range threshold `ceil(n^theta)`.
pub fn threshold(n: u64, theta: f64) -> u64 {
    let k = (n as f64).powf(theta);
    // Guard against representation error on exact powers such as 4^{0.5}.
    let r = k.round();
    if (k - r).abs() < 1e-9 * r.max(1.0) {
        (r as u64).max(1)
    } else {
        (k.ceil() as u64).max(1)
    }
}

/// `R^{>=k}`: number of edges crossed at least `k` times downwards.
pub fn heavy_range(record: &WalkRecord, k: u64) -> usize {
    record.local_time.iter().filter(|&&l| l >= k.max(1)).count()
}

/// Heavy range split by the number of excursions that visited the edge.
pub fn heavy_range_by_excursions(record: &WalkRecord, k: u64) -> BTreeMap<u32, usize> {
    let k = k.max(1);
    let mut out = BTreeMap::new();
    for (l, e) in record.local_time.iter().zip(&record.visits) {
        if *l >= k {
            *out.entry(*e).or_insert(0) += 1;
        }
    }
    out
}

/// The `j = 1` / `j >= 2` decomposition of the heavy range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeavySplit {
    pub total: usize,
    pub single: usize,
    pub multi: usize,
}

pub fn heavy_split(record: &WalkRecord, k: u64) -> HeavySplit {
    let by = heavy_range_by_excursions(record, k);
    let single = by.get(&1).copied().unwrap_or(0);
    let total: usize = by.values().sum();
    HeavySplit { total, single, multi: total - single }
}

/// Path functionals of one node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathStats {
    pub depth: u32,
    pub v: f64,
    /// `max` of `V` over the ancestral path, both ends included.
    pub v_max: f64,
    pub v_min: f64,
    /// `log H_x`, kept alongside `h` so deep nodes never overflow.
    pub log_h: f64,
    pub h: f64,
    /// `max_{y < x} H_y` (strict ancestors; 0 at the root).
    pub h_max_before: f64,
    /// `max_{y <= x} H_y`
    pub h_max: f64,
}

impl PathStats {
    pub fn root() -> Self {
        Self {
            depth: 0,
            v: 0.0,
            v_max: 0.0,
            v_min: 0.0,
            log_h: 0.0,
            h: 1.0,
            h_max_before: 0.0,
            h_max: 1.0,
        }
    }

    /// Stats of a child with potential `v`, given those of its parent.
    pub fn child(&self, v: f64) -> Self {
        let t = self.v - v + self.log_h;
        let log_h = if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
        let h = log_h.exp();
        Self {
            depth: self.depth + 1,
            v,
            v_max: self.v_max.max(v),
            v_min: self.v_min.min(v),
            log_h,
            h,
            h_max_before: self.h_max,
            h_max: self.h_max.max(h),
        }
    }

    /// `V-bar - V`
    #[inline]
    pub fn gap(&self) -> f64 {
        self.v_max - self.v
    }

    /// Checks `e^{V-bar - V} <= H <= (|x|+1) e^{V-bar - V}` in log form.
    pub fn bounds_hold(&self, tol: f64) -> bool {
        let g = self.gap();
        self.log_h >= g - tol && self.log_h <= g + ((self.depth + 1) as f64).ln() + tol
    }
}

/// Path stats of a node by walking its ancestry: the direct oracle for
/// [`PathStatsTable`].
pub fn path_stats(env: &Environment, node: NodeId) -> Result<PathStats> {
    if !env.contains(node) {
        return Err(Error::UnknownNode(node));
    }
    let path = env.ancestry(node);
    let vs: Vec<f64> = path.iter().map(|&y| env.v(y)).collect();
    Ok(stats_of_path(&vs))
}

/// Direct O(depth) computation from the potentials `V(rho), ..., V(x)`.
pub fn stats_of_path(vs: &[f64]) -> PathStats {
    let mut out = PathStats::root();
    let mut hs = Vec::with_capacity(vs.len());
    for (i, &v) in vs.iter().enumerate() {
        let prefix = &vs[..=i];
        let lse = crate::stats::log_sum_exp(prefix.iter().map(|&y| y - v));
        hs.push(lse.exp());
        out.depth = i as u32;
        out.v = v;
        out.log_h = lse;
    }
    out.v_max = vs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    out.v_min = vs.iter().copied().fold(f64::INFINITY, f64::min);
    out.h = out.log_h.exp();
    out.h_max_before = hs[..hs.len() - 1].iter().copied().fold(0.0, f64::max);
    out.h_max = out.h_max_before.max(out.h);
    out
}

/// Path stats for every node of an environment, indexed by node id. Node
/// ids are assigned parents first, so one forward pass suffices; the table
/// can be extended as the environment grows.
#[derive(Debug, Clone, Default)]
pub struct PathStatsTable {
    stats: Vec<PathStats>,
}

impl PathStatsTable {
    pub fn build(env: &Environment) -> Self {
        let mut t = Self { stats: Vec::with_capacity(env.len()) };
        t.extend(env);
        t
    }

    pub fn extend(&mut self, env: &Environment) {
        for i in self.stats.len()..env.len() {
            let x = NodeId(i as u32);
            let s = if i == 0 {
                PathStats::root()
            } else {
                self.stats[env.parent(x).index()].child(env.v(x))
            };
            self.stats.push(s);
        }
    }

    #[inline]
    pub fn get(&self, x: NodeId) -> &PathStats {
        &self.stats[x.index()]
    }

    pub fn len(&self) -> usize {
        self.stats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &PathStats)> {
        self.stats.iter().enumerate().map(|(i, s)| (NodeId(i as u32), s))
    }

    /// First node violating the `H_x` sandwich, if any.
    pub fn first_bound_violation(&self) -> Option<NodeId> {
        self.iter().find(|(_, s)| !s.bounds_hold(1e-9)).map(|(x, _)| x)
    }
}

/// The sets used to localise the heavy range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Barrier {
    /// `V-bar - V <= theta log n + a` and `V <= (1-theta) log n + b`.
    A { a: f64, b: f64 },
    /// `V-bar <= log n + a` and `V <= (1-theta) log n + b`.
    APlus { a: f64, b: f64 },
    /// `V-bar >= log n + a_n`.
    BPlus { a_n: f64 },
    /// `V-bar >= log n - a_n`.
    BMinus { a_n: f64 },
    /// `V-bar - V` within `a_n` of `theta log n`.
    D { a_n: f64 },
    /// `V-bar - V` within `k` of `theta log n`.
    DK { k: f64 },
    /// `max_{y<x} H_y < r`.
    BelowLine { r: f64 },
    /// `max_{y<x} H_y < r <= H_x`: the stopping line itself.
    OnLine { r: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierSpec {
    pub theta: f64,
    pub n: f64,
    pub barrier: Barrier,
}

impl BarrierSpec {
    pub fn new(theta: f64, n: f64, barrier: Barrier) -> Result<Self> {
        let s = Self { theta, n, barrier };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::InvalidArgument(format!("theta must lie in (0,1), got {}", self.theta)));
        }
        if !(self.n >= 1.0 && self.n.is_finite()) {
            return Err(Error::InvalidArgument(format!("n must be finite and >= 1, got {}", self.n)));
        }
        let finite = match self.barrier {
            Barrier::A { a, b } | Barrier::APlus { a, b } => a.is_finite() && b.is_finite(),
            Barrier::BPlus { a_n } | Barrier::BMinus { a_n } | Barrier::D { a_n } => a_n.is_finite(),
            Barrier::DK { k } => k.is_finite(),
            Barrier::BelowLine { r } | Barrier::OnLine { r } => {
                if !(r > 1.0) {
                    return Err(Error::InvalidArgument(format!("line level must exceed 1, got {r}")));
                }
                true
            }
        };
        if !finite {
            return Err(Error::InvalidArgument("barrier offsets must be finite".into()));
        }
        Ok(())
    }
}

/// `a_n = a log log n` (zero while `log log n` is negative).
pub fn a_n(a: f64, n: f64) -> f64 {
    a * n.ln().ln().max(0.0)
}

/// `gamma_n = n / (log n)^gamma`.
pub fn gamma_n(gamma: f64, n: f64) -> f64 {
    n / n.ln().powf(gamma)
}

pub fn in_barrier(stats: &PathStats, spec: &BarrierSpec) -> bool {
    let ln = spec.n.ln();
    let th = spec.theta;
    match spec.barrier {
        Barrier::A { a, b } => stats.gap() <= th * ln + a && stats.v <= (1.0 - th) * ln + b,
        Barrier::APlus { a, b } => stats.v_max <= ln + a && stats.v <= (1.0 - th) * ln + b,
        Barrier::BPlus { a_n } => stats.v_max >= ln + a_n,
        Barrier::BMinus { a_n } => stats.v_max >= ln - a_n,
        Barrier::D { a_n } => (stats.gap() - th * ln).abs() <= a_n,
        Barrier::DK { k } => (stats.gap() - th * ln).abs() <= k,
        Barrier::BelowLine { r } => stats.h_max_before < r,
        Barrier::OnLine { r } => stats.h_max_before < r && r <= stats.h,
    }
}

/// Generation cutoff `c0 (log n)^3`.
pub fn generation_cutoff(c0: f64, n: f64) -> u32 {
    (c0 * n.ln().max(0.0).powi(3)).floor() as u32
}

/// Number of nodes of generation `1..=max_gen` lying in the barrier set
/// and satisfying `V-underbar >= -alpha`.
pub fn count_in_barrier(table: &PathStatsTable, spec: &BarrierSpec, max_gen: u32, alpha: f64) -> usize {
    table
        .iter()
        .filter(|(_, s)| s.depth >= 1 && s.depth <= max_gen && s.v_min >= -alpha)
        .filter(|(_, s)| in_barrier(s, spec))
        .count()
}

/// True iff some node visited by the walk lies on the stopping line at
/// level `r`. `r = f64::INFINITY` never hits.
pub fn stopping_line_hit(record: &WalkRecord, table: &PathStatsTable, r: f64) -> bool {
    if !r.is_finite() {
        return false;
    }
    record.visited().any(|x| {
        let s = table.get(x);
        s.h_max_before < r && r <= s.h
    })
}

/// `W_m` and `D_m` for `m = 0..=depth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleSeries {
    pub log_w: Vec<f64>,
    pub w: Vec<f64>,
    pub d: Vec<f64>,
    pub population: Vec<usize>,
    /// False when the population cap stopped the realization; the series
    /// then covers only the complete generations.
    pub complete: bool,
}

fn generation_sums(vs: &[f64]) -> (f64, f64) {
    if vs.is_empty() {
        return (f64::NEG_INFINITY, 0.0);
    }
    let shift = vs.iter().copied().fold(f64::INFINITY, f64::min);
    let mut w = 0.0;
    let mut d = 0.0;
    for &v in vs {
        let e = (shift - v).exp();
        w += e;
        d += v * e;
    }
    let scale = (-shift).exp();
    (w.ln() - shift, d * scale)
}

/// Realizes the environment to `depth` and evaluates both martingales on
/// every generation.
pub fn martingales(env: &mut Environment, depth: u32) -> Result<MartingaleSeries> {
    let sizes = env.realize_to_depth(depth)?;
    let complete_gens = if sizes.complete { depth as usize + 1 } else { sizes.sizes.len() };
    let mut by_gen: Vec<Vec<f64>> = vec![Vec::new(); complete_gens];
    for i in 0..env.len() {
        let x = NodeId(i as u32);
        let d = env.depth(x) as usize;
        if d < complete_gens {
            by_gen[d].push(env.v(x));
        }
    }
    let mut out = MartingaleSeries {
        log_w: Vec::new(),
        w: Vec::new(),
        d: Vec::new(),
        population: Vec::new(),
        complete: sizes.complete,
    };
    for g in &by_gen {
        let (lw, d) = generation_sums(g);
        out.log_w.push(lw);
        out.w.push(lw.exp());
        out.d.push(d);
        out.population.push(g.len());
    }
    Ok(out)
}

/// `W_M` and `D_M` of one tree at a single horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MartingalePoint {
    pub horizon: u32,
    pub w: f64,
    pub d: f64,
    pub population: u64,
}

/// `W_M`, `D_M` by a depth-first sweep that never stores generation `M`.
///
/// Realized parts of `env` are used as they are. Below an unrealized node
/// the tree is completed from a dedicated stream keyed by the environment
/// seed and the node id, so the sweep is reproducible and does not touch
/// the environment's own random stream.
pub fn martingale_streaming(env: &Environment, horizon: u32) -> Result<MartingalePoint> {
    let mut w = 0.0;
    let mut d = 0.0;
    let mut population = 0u64;
    let mut fam = Vec::new();
    let mut stack: Vec<NodeId> = vec![NodeId::ROOT];
    while let Some(x) = stack.pop() {
        let depth = env.depth(x);
        if depth == horizon {
            let v = env.v(x);
            let e = (-v).exp();
            w += e;
            d += v * e;
            population += 1;
            continue;
        }
        if env.is_realized(x) {
            stack.extend_from_slice(env.children(x));
        } else {
            let law = env.law().ok_or(Error::NoLaw(x))?;
            let mut rng = stream(env.seed(), &[0xD0, x.0 as u64]);
            let (sw, sd, sp) = complete_subtree(law, &mut rng, env.v(x), horizon - depth, &mut fam);
            w += sw;
            d += sd;
            population += sp;
        }
    }
    Ok(MartingalePoint { horizon, w, d, population })
}

fn complete_subtree(
    law: &crate::law::OffspringLaw,
    rng: &mut SimRng,
    v0: f64,
    levels: u32,
    fam: &mut Vec<f64>,
) -> (f64, f64, u64) {
    let mut w = 0.0;
    let mut d = 0.0;
    let mut pop = 0u64;
    let mut stack: Vec<(f64, u32)> = vec![(v0, levels)];
    while let Some((v, left)) = stack.pop() {
        if left == 0 {
            let e = (-v).exp();
            w += e;
            d += v * e;
            pop += 1;
            continue;
        }
        law.sample_children(rng, fam);
        for &xi in fam.iter() {
            stack.push((v + xi, left - 1));
        }
    }
    (w, d, pop)
}

/// `sum_x e^{-V(x)} f(k / H_x)` with `f(u) = u e^{-u}` over nodes of
/// generations `lo..=hi` in a barrier intersection; the quenched mean of
/// the single-excursion heavy count is `n` times this sum (up to
/// `1 + o(1)`).
pub fn quenched_single_excursion_mass(
    table: &PathStatsTable,
    k: f64,
    lo: u32,
    hi: u32,
    barriers: &[BarrierSpec],
) -> f64 {
    table
        .iter()
        .filter(|(_, s)| s.depth >= lo && s.depth <= hi)
        .filter(|(_, s)| barriers.iter().all(|b| in_barrier(s, b)))
        .map(|(_, s)| {
            let u = k / s.h;
            (-s.v).exp() * u * (-u).exp()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn root_and_chain_stats() {
        let env = Environment::chain(&[0.0, LN2, 0.0]).unwrap();
        let r = path_stats(&env, NodeId::ROOT).unwrap();
        assert_eq!((r.v_max, r.v_min, r.h), (0.0, 0.0, 1.0));
        let t = PathStatsTable::build(&env);
        let s = t.get(NodeId(2));
        assert!((s.h - 4.0).abs() < 1e-12);
        assert!((path_stats(&env, NodeId(2)).unwrap().h - 4.0).abs() < 1e-12);
        assert!((s.h_max_before - 1.5).abs() < 1e-12);
        assert!((s.v_max - LN2).abs() < 1e-15);
    }

    #[test]
    fn thresholds_use_the_ceiling() {
        assert_eq!(threshold(1024, 0.5), 32);
        assert_eq!(threshold(1000, 0.5), 32);
        assert_eq!(threshold(16, 0.25), 2);
        assert_eq!(threshold(10, 0.0001), 2);
    }

    #[test]
    fn root_lies_in_a_n_zero_zero() {
        for n in [1.0, 2.0, 1e6] {
            let spec = BarrierSpec::new(0.3, n, Barrier::A { a: 0.0, b: 0.0 }).unwrap();
            assert!(in_barrier(&PathStats::root(), &spec));
        }
    }

    #[test]
    fn line_levels_must_exceed_one() {
        assert!(BarrierSpec::new(0.5, 10.0, Barrier::OnLine { r: 1.0 }).is_err());
        assert!(BarrierSpec::new(1.0, 10.0, Barrier::D { a_n: 1.0 }).is_err());
    }

    #[test]
    fn generation_sums_are_stable() {
        let (lw, d) = generation_sums(&[800.0, 801.0]);
        assert!((lw - (-800.0 + (1.0 + (-1.0f64).exp()).ln())).abs() < 1e-12);
        assert_eq!(d, 0.0);
        let (lw, d) = generation_sums(&[0.0]);
        assert_eq!((lw, d), (0.0, 0.0));
    }
}
