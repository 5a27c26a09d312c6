//! The size-biased branching random walk with a marked ray, and the
//! many-to-one identities it yields.
//!
//! Along the spine each family is drawn from the point process tilted by
//! `sum_z e^{-z}` and the next spine vertex is chosen among the children
//! with probability proportional to `e^{-V}`. Every other vertex
//! reproduces according to the original law.

use rand::RngExt;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::law::{tilted_increment, LawKind, OffspringLaw};
use crate::seed::{stream, SimRng};
use crate::stats::{chi_square_gof, ks_two_sample, Summary};

/// Proposal budget of the rejection sampler.
pub const REJECTION_BUDGET: u32 = 10_000;
/// Default population cap for a spine tree with its side subtrees.
pub const SPINE_TREE_CAP: usize = 2_000_000;

/// Sampler for the tilted family together with the spine child.
#[derive(Debug, Clone)]
pub enum TiltedLaw {
    /// Binary Gaussian family: the spine child is one of the two slots
    /// with equal probability, its displacement is `N(mean - var, var)`
    /// and the other one keeps the original law.
    GaussianMixture { mean: f64, variance: f64 },
    /// Finite law: every (atom, child) pair weighted by `p e^{-z}`.
    Enumerated { pairs: Vec<(usize, usize)>, cumulative: Vec<f64> },
    /// Generic law: propose a family from the original law and accept it
    /// with probability `sum e^{-z} / bound`.
    Rejection { bound: f64 },
}

impl TiltedLaw {
    pub fn for_law(law: &OffspringLaw) -> Self {
        Self::with_rejection_bound(law, 16.0)
    }

    /// As [`for_law`](Self::for_law); `bound` must dominate `sum e^{-z}`
    /// almost surely and is only used for laws without an exact sampler.
    pub fn with_rejection_bound(law: &OffspringLaw, bound: f64) -> Self {
        match &law.kind {
            LawKind::GaussianBinary { mean, variance } => {
                TiltedLaw::GaussianMixture { mean: *mean, variance: *variance }
            }
            LawKind::Discrete { atoms, .. } => {
                let mut pairs = Vec::new();
                let mut weights = Vec::new();
                for (ai, a) in atoms.iter().enumerate() {
                    for (ci, &z) in a.displacements.iter().enumerate() {
                        pairs.push((ai, ci));
                        weights.push(a.prob * (-z).exp());
                    }
                }
                let total: f64 = weights.iter().sum();
                let mut acc = 0.0;
                let cumulative = weights
                    .iter()
                    .map(|w| {
                        acc += w / total;
                        acc
                    })
                    .collect();
                TiltedLaw::Enumerated { pairs, cumulative }
            }
            LawKind::Custom(_) => TiltedLaw::Rejection { bound },
        }
    }

    /// Draws a tilted family into `out` and returns the index of the
    /// spine child.
    pub fn sample(&self, law: &OffspringLaw, rng: &mut SimRng, out: &mut Vec<f64>) -> Result<usize> {
        out.clear();
        match self {
            TiltedLaw::GaussianMixture { mean, variance } => {
                let s = variance.sqrt();
                let i = usize::from(rng.random::<bool>());
                let z0: f64 = rng.sample(StandardNormal);
                let z1: f64 = rng.sample(StandardNormal);
                let tilted = mean - variance + s * z0;
                let plain = mean + s * z1;
                if i == 0 {
                    out.extend_from_slice(&[tilted, plain]);
                } else {
                    out.extend_from_slice(&[plain, tilted]);
                }
                Ok(i)
            }
            TiltedLaw::Enumerated { pairs, cumulative } => {
                let LawKind::Discrete { atoms, .. } = &law.kind else {
                    return Err(Error::UnsupportedLaw("enumerated tilt needs a discrete law".into()));
                };
                let u: f64 = rng.random();
                let k = cumulative.partition_point(|&c| c <= u).min(pairs.len() - 1);
                let (ai, ci) = pairs[k];
                out.extend_from_slice(&atoms[ai].displacements);
                Ok(ci)
            }
            TiltedLaw::Rejection { bound } => {
                for _ in 0..REJECTION_BUDGET {
                    law.sample_children(rng, out);
                    let w: Vec<f64> = out.iter().map(|z| (-z).exp()).collect();
                    let total: f64 = w.iter().sum();
                    if total > *bound {
                        return Err(Error::UnsupportedLaw(format!(
                            "rejection bound {bound} exceeded by a family with weight {total}"
                        )));
                    }
                    if rng.random::<f64>() * bound < total {
                        let mut u = rng.random::<f64>() * total;
                        for (i, wi) in w.iter().enumerate() {
                            if u < *wi {
                                return Ok(i);
                            }
                            u -= wi;
                        }
                        return Ok(w.len() - 1);
                    }
                }
                Err(Error::UnsupportedLaw(format!(
                    "no tilted family accepted in {REJECTION_BUDGET} proposals"
                )))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpineNode {
    pub parent: Option<usize>,
    pub depth: u32,
    pub v: f64,
}

/// A tree to depth `m` with its spine `w_0 = rho, ..., w_m`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpineTree {
    pub nodes: Vec<SpineNode>,
    /// Indices of `w_0, ..., w_m` in `nodes`.
    pub spine: Vec<usize>,
    /// `siblings[j]`: the brothers of `w_j` (empty for `j = 0`).
    pub siblings: Vec<Vec<usize>>,
}

impl SpineTree {
    pub fn depth(&self) -> u32 {
        (self.spine.len() - 1) as u32
    }

    pub fn spine_potentials(&self) -> Vec<f64> {
        self.spine.iter().map(|&i| self.nodes[i].v).collect()
    }

    /// Nodes of generation `g`.
    pub fn generation(&self, g: u32) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].depth == g).collect()
    }

    /// Sizes of generations `depth(u)..=m` of the subtree rooted at `u`.
    pub fn subtree_sizes(&self, u: usize) -> Vec<usize> {
        let m = self.depth() as usize;
        let d0 = self.nodes[u].depth as usize;
        let mut inside = vec![false; self.nodes.len()];
        inside[u] = true;
        let mut sizes = vec![0usize; m - d0 + 1];
        sizes[0] = 1;
        for i in u + 1..self.nodes.len() {
            if let Some(p) = self.nodes[i].parent {
                if inside[p] {
                    inside[i] = true;
                    sizes[self.nodes[i].depth as usize - d0] += 1;
                }
            }
        }
        sizes
    }
}

/// Samples the spine tree to depth `m`. Side subtrees are grown under the
/// original law down to generation `m`.
pub fn sample_spine_tree(law: &OffspringLaw, m: u32, rng: &mut SimRng) -> Result<SpineTree> {
    sample_spine_tree_with(law, &TiltedLaw::for_law(law), m, rng, SPINE_TREE_CAP)
}

pub fn sample_spine_tree_with(
    law: &OffspringLaw,
    tilt: &TiltedLaw,
    m: u32,
    rng: &mut SimRng,
    cap: usize,
) -> Result<SpineTree> {
    let mut nodes = vec![SpineNode { parent: None, depth: 0, v: 0.0 }];
    let mut spine = vec![0usize];
    let mut siblings = vec![Vec::new()];
    let mut fam = Vec::new();
    let mut side_roots = Vec::new();
    for j in 1..=m {
        let w = *spine.last().expect("spine is never empty");
        let i = tilt.sample(law, rng, &mut fam)?;
        let base = nodes[w].v;
        let mut sib = Vec::new();
        for (k, &z) in fam.iter().enumerate() {
            nodes.push(SpineNode { parent: Some(w), depth: j, v: base + z });
            let id = nodes.len() - 1;
            if k == i {
                spine.push(id);
            } else {
                sib.push(id);
                side_roots.push(id);
            }
        }
        siblings.push(sib);
    }
    // Grow the side subtrees breadth first, in a fixed order.
    let mut frontier = side_roots;
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for u in frontier {
            let d = nodes[u].depth;
            if d >= m {
                continue;
            }
            law.sample_children(rng, &mut fam);
            if nodes.len() + fam.len() > cap {
                return Err(Error::PopulationCap { cap });
            }
            let base = nodes[u].v;
            for &z in &fam {
                nodes.push(SpineNode { parent: Some(u), depth: d + 1, v: base + z });
                next.push(nodes.len() - 1);
            }
        }
        frontier = next;
    }
    Ok(SpineTree { nodes, spine, siblings })
}

/// Spine potentials `V(w_1), ..., V(w_m)` without the side subtrees.
pub fn sample_spine_path(
    law: &OffspringLaw,
    tilt: &TiltedLaw,
    m: u32,
    rng: &mut SimRng,
) -> Result<Vec<f64>> {
    let mut fam = Vec::new();
    let mut v = 0.0;
    let mut out = Vec::with_capacity(m as usize);
    for _ in 0..m {
        let i = tilt.sample(law, rng, &mut fam)?;
        v += fam[i];
        out.push(v);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpineMarginalReport {
    pub m: u32,
    pub samples: usize,
    pub test: String,
    pub statistic: f64,
    pub p_value: f64,
    pub pass: bool,
}

/// Compares the law of `V(w_m)` with that of the `m`-step walk with
/// tilted increments: a two-sample KS test, or for discrete laws an
/// exact chi-square test against the enumerated law of the walk.
pub fn spine_marginal_check(law: &OffspringLaw, m: u32, samples: usize, seed: u64) -> Result<SpineMarginalReport> {
    if m == 0 {
        return Err(Error::InvalidArgument("m must be at least 1".into()));
    }
    let tilt = TiltedLaw::for_law(law);
    let inc = tilted_increment(law)
        .ok_or_else(|| Error::UnsupportedLaw("no closed-form tilted increment".into()))?;
    let mut rng = stream(seed, &[0x5B1, m as u64]);
    let spine_end: Vec<f64> = (0..samples)
        .map(|_| sample_spine_path(law, &tilt, m, &mut rng).map(|p| p[m as usize - 1]))
        .collect::<Result<_>>()?;
    if let crate::rw1d::Walk1DLaw::Discrete { points } = &inc {
        // Exact law of S_m by convolution of the tilted increment.
        let mut dist: Vec<(f64, f64)> = vec![(0.0, 1.0)];
        for _ in 0..m {
            let mut next: Vec<(f64, f64)> = Vec::new();
            for &(x, p) in &dist {
                for &(y, q) in points {
                    let s = x + y;
                    match next.iter_mut().find(|e| (e.0 - s).abs() < 1e-9) {
                        Some(e) => e.1 += p * q,
                        None => next.push((s, p * q)),
                    }
                }
            }
            dist = next;
        }
        dist.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut observed = vec![0u64; dist.len()];
        for v in &spine_end {
            let k = dist
                .iter()
                .position(|e| (e.0 - v).abs() < 1e-9)
                .ok_or_else(|| Error::InvalidArgument(format!("spine value {v} outside the walk support")))?;
            observed[k] += 1;
        }
        let probs: Vec<f64> = dist.iter().map(|e| e.1).collect();
        let (stat, _, p) = chi_square_gof(&observed, &probs);
        return Ok(SpineMarginalReport {
            m,
            samples,
            test: "chi-square".into(),
            statistic: stat,
            p_value: p,
            pass: p > 0.01,
        });
    }
    let mut rng = stream(seed, &[0x5B2, m as u64]);
    let walk_end: Vec<f64> = (0..samples)
        .map(|_| (0..m).map(|_| inc.sample(&mut rng)).sum())
        .collect();
    let ks = ks_two_sample(&spine_end, &walk_end);
    Ok(SpineMarginalReport {
        m,
        samples,
        test: "ks-two-sample".into(),
        statistic: ks.statistic,
        p_value: ks.p_value,
        pass: ks.p_value > 0.01,
    })
}

/// A path functional `f(S_1, ..., S_m)` with a name for reports.
pub struct PathFunctional {
    pub name: String,
    pub f: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl PathFunctional {
    pub fn new(name: &str, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.into(), f: Box::new(f) }
    }
}

/// The five functionals used by the acceptance checks.
pub fn standard_functionals() -> Vec<PathFunctional> {
    vec![
        PathFunctional::new("one", |_| 1.0),
        PathFunctional::new("end-nonpositive", |p| f64::from(*p.last().unwrap_or(&0.0) <= 0.0)),
        PathFunctional::new("tube-0-2", |p| f64::from(p.iter().all(|&s| (0.0..=2.0).contains(&s)))),
        PathFunctional::new("min-above-minus-1", |p| f64::from(p.iter().all(|&s| s >= -1.0))),
        PathFunctional::new("cos-end", |p| p.last().copied().unwrap_or(0.0).cos()),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManyToOneReport {
    pub functional: String,
    pub m: u32,
    pub samples: usize,
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub rhs_se: f64,
    /// The two `3 se` confidence intervals overlap.
    pub compatible: bool,
}

/// `sum_{|u|=m} e^{-V(u)} f(V(u_1), ..., V(u_m))` on one freshly grown
/// tree, evaluated depth first.
fn tree_functionals(law: &OffspringLaw, m: u32, rng: &mut SimRng, fs: &[PathFunctional], acc: &mut [f64]) {
    acc.iter_mut().for_each(|a| *a = 0.0);
    let mut fam = Vec::new();
    let mut path: Vec<f64> = Vec::with_capacity(m as usize);
    // Stack of pending (depth, potential) entries; `path` holds the
    // potentials of generations 1..depth of the current branch.
    let mut stack: Vec<(u32, f64)> = vec![(0, 0.0)];
    while let Some((d, v)) = stack.pop() {
        path.truncate(d.saturating_sub(1) as usize);
        if d > 0 {
            path.push(v);
        }
        if d == m {
            let w = (-v).exp();
            for (a, f) in acc.iter_mut().zip(fs) {
                *a += w * (f.f)(&path);
            }
            continue;
        }
        law.sample_children(rng, &mut fam);
        for &z in fam.iter().rev() {
            stack.push((d + 1, v + z));
        }
    }
}

/// Both sides of the many-to-one identity for each functional: direct
/// tree simulation against the walk with tilted increments.
pub fn many_to_one_check(
    law: &OffspringLaw,
    m: u32,
    fs: &[PathFunctional],
    samples: usize,
    seed: u64,
) -> Result<Vec<ManyToOneReport>> {
    if m == 0 || m > 20 {
        return Err(Error::InvalidArgument(format!("m must lie in 1..=20, got {m}")));
    }
    let inc = tilted_increment(law)
        .ok_or_else(|| Error::UnsupportedLaw("no closed-form tilted increment".into()))?;
    let mut lhs: Vec<Vec<f64>> = vec![Vec::with_capacity(samples); fs.len()];
    let mut acc = vec![0.0; fs.len()];
    let mut rng = stream(seed, &[0x3101, m as u64]);
    for _ in 0..samples {
        tree_functionals(law, m, &mut rng, fs, &mut acc);
        for (l, a) in lhs.iter_mut().zip(&acc) {
            l.push(*a);
        }
    }
    let mut rhs: Vec<Vec<f64>> = vec![Vec::with_capacity(samples); fs.len()];
    let mut rng = stream(seed, &[0x3102, m as u64]);
    let mut path = vec![0.0; m as usize];
    for _ in 0..samples {
        let mut s = 0.0;
        for p in path.iter_mut() {
            s += inc.sample(&mut rng);
            *p = s;
        }
        for (r, f) in rhs.iter_mut().zip(fs) {
            r.push((f.f)(&path));
        }
    }
    Ok(fs
        .iter()
        .zip(lhs.iter().zip(&rhs))
        .map(|(f, (l, r))| {
            let l = Summary::of(l);
            let r = Summary::of(r);
            let compatible = (l.mean - r.mean).abs() <= 3.0 * (l.se() + r.se());
            ManyToOneReport {
                functional: f.name.clone(),
                m,
                samples,
                lhs: l.mean,
                lhs_se: l.se(),
                rhs: r.mean,
                rhs_se: r.se(),
                compatible,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::law::DiscreteAtom;

    #[test]
    fn depth_zero_is_the_root() {
        let t = sample_spine_tree(&OffspringLaw::canonical(), 0, &mut stream(1, &[])).unwrap();
        assert_eq!(t.spine, vec![0]);
        assert_eq!(t.nodes.len(), 1);
    }

    #[test]
    fn spine_links_are_parent_child() {
        let t = sample_spine_tree(&OffspringLaw::canonical(), 6, &mut stream(2, &[])).unwrap();
        assert_eq!(t.spine.len(), 7);
        for w in t.spine.windows(2) {
            assert_eq!(t.nodes[w[1]].parent, Some(w[0]));
        }
        for j in 1..=6 {
            assert_eq!(t.siblings[j].len(), 1);
            assert_eq!(t.generation(j as u32).len(), 1 << j);
        }
    }

    #[test]
    fn discrete_tilt_enumerates_pairs() {
        let law = OffspringLaw::discrete(vec![
            DiscreteAtom { prob: 0.5, displacements: vec![0.0, 1.0] },
            DiscreteAtom { prob: 0.5, displacements: vec![2.0] },
        ])
        .unwrap();
        let TiltedLaw::Enumerated { pairs, cumulative } = TiltedLaw::for_law(&law) else {
            panic!("expected enumerated tilt");
        };
        assert_eq!(pairs, vec![(0, 0), (0, 1), (1, 0)]);
        let w = [0.5, 0.5 * (-1.0f64).exp(), 0.5 * (-2.0f64).exp()];
        let t: f64 = w.iter().sum();
        assert!((cumulative[0] - w[0] / t).abs() < 1e-15);
    }

    #[test]
    fn constant_functional_has_unit_mean_both_ways() {
        let fs = vec![PathFunctional::new("one", |_| 1.0)];
        let r = many_to_one_check(&OffspringLaw::canonical(), 3, &fs, 20_000, 9).unwrap();
        assert_eq!(r[0].rhs, 1.0);
        assert!((r[0].lhs - 1.0).abs() < 4.0 * r[0].lhs_se, "{:?}", r[0]);
    }
}
