//! Lazily realized Galton-Watson tree carrying the potential `V`.
//!
//! Nodes live in a dense arena. A node's children are sampled the first
//! time anybody asks for them and are cached afterwards; potentials are
//! stored on the log scale and the weights `e^{-V}` are never stored.

use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::law::OffspringLaw;
use crate::seed::{rng_from_seed, SimRng};

pub const DEFAULT_POPULATION_CAP: usize = 10_000_000;

/// Dense node index. `NodeId::ROOT` is the root and `NodeId::STAR` the
/// virtual parent of the root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);
    pub const STAR: NodeId = NodeId(u32::MAX);

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_star(self) -> bool {
        self == NodeId::STAR
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_star() {
            write!(f, "rho*")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

/// Snapshot of one node.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub parent: NodeId,
    pub depth: u32,
    pub v: f64,
    pub children: Vec<NodeId>,
    pub realized: bool,
}

/// Breadth-first realization outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationSizes {
    pub sizes: Vec<usize>,
    /// False when the population cap stopped the realization early.
    pub complete: bool,
}

#[derive(Clone)]
pub struct Environment {
    law: Option<Arc<OffspringLaw>>,
    rng: SimRng,
    seed: u64,
    cap: usize,
    parent: Vec<NodeId>,
    depth: Vec<u32>,
    v: Vec<f64>,
    child_start: Vec<u32>,
    child_len: Vec<u32>,
    realized: Vec<bool>,
    child_arena: Vec<NodeId>,
    // Cumulative transition probabilities [parent, child_1, ..] without
    // the final 1; offset u32::MAX means not yet computed.
    cum_offset: Vec<u32>,
    cum: Vec<f64>,
    scratch: Vec<f64>,
}

impl fmt::Debug for Environment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Environment")
            .field("nodes", &self.len())
            .field("seed", &self.seed)
            .field("cap", &self.cap)
            .finish()
    }
}

impl Environment {
    /// A fresh environment consisting of the root only.
    pub fn new(law: Arc<OffspringLaw>, seed: u64) -> Self {
        let mut env = Self::empty(Some(law), seed);
        env.push_node(NodeId::STAR, 0, 0.0, false);
        env
    }

    fn empty(law: Option<Arc<OffspringLaw>>, seed: u64) -> Self {
        Self {
            law,
            rng: rng_from_seed(seed),
            seed,
            cap: DEFAULT_POPULATION_CAP,
            parent: Vec::new(),
            depth: Vec::new(),
            v: Vec::new(),
            child_start: Vec::new(),
            child_len: Vec::new(),
            realized: Vec::new(),
            child_arena: Vec::new(),
            cum_offset: Vec::new(),
            cum: Vec::new(),
            scratch: Vec::new(),
        }
    }

    /// A finite, fully realized tree given as `(parent, V)` pairs; entry 0
    /// is the root (its parent and potential are ignored and set to
    /// `rho*` and 0). Parents must precede their children.
    pub fn from_parents(nodes: &[(Option<usize>, f64)]) -> Result<Self> {
        let mut env = Self::empty(None, 0);
        for (i, &(p, v)) in nodes.iter().enumerate() {
            if i == 0 {
                env.push_node(NodeId::STAR, 0, 0.0, true);
                continue;
            }
            let p = p.ok_or_else(|| Error::InvalidArgument(format!("node {i} has no parent")))?;
            if p >= i {
                return Err(Error::InvalidArgument(format!(
                    "parent {p} of node {i} must precede it"
                )));
            }
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("node {i} has non-finite V")));
            }
            let d = env.depth[p] + 1;
            env.push_node(NodeId(p as u32), d, v, true);
        }
        env.rebuild_children();
        Ok(env)
    }

    /// A path `rho = x_0, x_1, ..., x_k` with the given potentials
    /// (`potentials[0]` must be 0).
    pub fn chain(potentials: &[f64]) -> Result<Self> {
        let nodes: Vec<(Option<usize>, f64)> = potentials
            .iter()
            .enumerate()
            .map(|(i, &v)| (if i == 0 { None } else { Some(i - 1) }, v))
            .collect();
        Self::from_parents(&nodes)
    }

    fn rebuild_children(&mut self) {
        let n = self.len();
        let mut lists: Vec<Vec<NodeId>> = vec![Vec::new(); n];
        for i in 1..n {
            lists[self.parent[i].index()].push(NodeId(i as u32));
        }
        self.child_arena.clear();
        for (i, l) in lists.into_iter().enumerate() {
            self.child_start[i] = self.child_arena.len() as u32;
            self.child_len[i] = l.len() as u32;
            self.child_arena.extend(l);
        }
    }

    fn push_node(&mut self, parent: NodeId, depth: u32, v: f64, realized: bool) -> NodeId {
        let id = NodeId(self.parent.len() as u32);
        self.parent.push(parent);
        self.depth.push(depth);
        self.v.push(v);
        self.child_start.push(0);
        self.child_len.push(0);
        self.realized.push(realized);
        self.cum_offset.push(u32::MAX);
        id
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = cap;
        self
    }

    pub fn set_cap(&mut self, cap: usize) {
        self.cap = cap;
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn law(&self) -> Option<&Arc<OffspringLaw>> {
        self.law.as_ref()
    }

    /// Number of nodes in the arena (realized or not).
    #[inline]
    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn realized_count(&self) -> usize {
        self.realized.iter().filter(|&&r| r).count()
    }

    #[inline]
    pub fn contains(&self, id: NodeId) -> bool {
        id.index() < self.len()
    }

    #[inline]
    pub fn v(&self, id: NodeId) -> f64 {
        self.v[id.index()]
    }

    #[inline]
    pub fn parent(&self, id: NodeId) -> NodeId {
        self.parent[id.index()]
    }

    #[inline]
    pub fn depth(&self, id: NodeId) -> u32 {
        self.depth[id.index()]
    }

    #[inline]
    pub fn is_realized(&self, id: NodeId) -> bool {
        self.realized[id.index()]
    }

    /// Cached children (empty when not realized).
    #[inline]
    pub fn children(&self, id: NodeId) -> &[NodeId] {
        let s = self.child_start[id.index()] as usize;
        let l = self.child_len[id.index()] as usize;
        &self.child_arena[s..s + l]
    }

    pub fn node(&self, id: NodeId) -> Result<Node> {
        if !self.contains(id) {
            return Err(Error::UnknownNode(id));
        }
        Ok(Node {
            id,
            parent: self.parent(id),
            depth: self.depth(id),
            v: self.v(id),
            children: self.children(id).to_vec(),
            realized: self.is_realized(id),
        })
    }

    /// Ancestral line `[rho, x]`, root first.
    pub fn ancestry(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = Vec::with_capacity(self.depth(id) as usize + 1);
        let mut cur = id;
        while !cur.is_star() {
            path.push(cur);
            cur = self.parent(cur);
        }
        path.reverse();
        path
    }

    /// Samples the children of `id` on first call; later calls return the
    /// cached list without touching the random stream.
    pub fn realize_children(&mut self, id: NodeId) -> Result<Vec<NodeId>> {
        self.ensure_children(id)?;
        Ok(self.children(id).to_vec())
    }

    /// Like [`realize_children`](Self::realize_children) without the copy.
    #[inline]
    pub fn ensure_children(&mut self, id: NodeId) -> Result<()> {
        if !self.contains(id) {
            return Err(Error::UnknownNode(id));
        }
        if self.realized[id.index()] {
            return Ok(());
        }
        self.grow(id)
    }

    #[cold]
    fn grow(&mut self, id: NodeId) -> Result<()> {
        let law = self.law.clone().ok_or(Error::NoLaw(id))?;
        let mut buf = std::mem::take(&mut self.scratch);
        law.sample_children(&mut self.rng, &mut buf);
        if self.len() + buf.len() > self.cap {
            self.scratch = buf;
            return Err(Error::PopulationCap { cap: self.cap });
        }
        let base_v = self.v(id);
        let d = self.depth(id) + 1;
        let start = self.child_arena.len() as u32;
        for &xi in &buf {
            let c = self.push_node(id, d, base_v + xi, false);
            self.child_arena.push(c);
        }
        self.child_start[id.index()] = start;
        self.child_len[id.index()] = buf.len() as u32;
        self.realized[id.index()] = true;
        self.scratch = buf;
        Ok(())
    }

    /// Cumulative transition probabilities out of `id` in the order
    /// `[parent, child_1, ..., child_{N-1}]` (the final 1 is implicit).
    /// Computed once per node with a log-sum-exp normalisation.
    #[inline]
    pub fn cumulative_transition(&mut self, id: NodeId) -> Result<&[f64]> {
        let i = id.index();
        if self.cum_offset.get(i).copied().unwrap_or(u32::MAX) == u32::MAX {
            self.ensure_children(id)?;
            self.compute_cumulative(id);
        }
        let off = self.cum_offset[i] as usize;
        let len = self.child_len[i] as usize;
        Ok(&self.cum[off..off + len])
    }

    #[cold]
    fn compute_cumulative(&mut self, id: NodeId) {
        let probs = self.transition_probs_realized(id);
        let off = self.cum.len() as u32;
        let mut acc = 0.0;
        for &p in &probs[..probs.len() - 1] {
            acc += p;
            self.cum.push(acc);
        }
        self.cum_offset[id.index()] = off;
    }

    /// Transition probabilities `[P(parent), P(child_1), ...]` of a node
    /// whose children are realized.
    pub fn transition_probs_realized(&self, id: NodeId) -> Vec<f64> {
        let children = self.children(id);
        let mut logw = Vec::with_capacity(children.len() + 1);
        logw.push(-self.v(id));
        logw.extend(children.iter().map(|&c| -self.v(c)));
        let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logw.iter().map(|l| (l - m).exp()).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect()
    }

    /// Realizes every node up to generation `depth` breadth first.
    pub fn realize_to_depth(&mut self, depth: u32) -> Result<GenerationSizes> {
        let mut sizes = vec![1usize];
        let mut frontier = vec![NodeId::ROOT];
        for _ in 0..depth {
            let mut next = Vec::with_capacity(frontier.len() * 2);
            for &x in &frontier {
                match self.ensure_children(x) {
                    Ok(()) => next.extend_from_slice(self.children(x)),
                    Err(Error::PopulationCap { .. }) => {
                        return Ok(GenerationSizes { sizes, complete: false })
                    }
                    Err(e) => return Err(e),
                }
            }
            sizes.push(next.len());
            frontier = next;
        }
        Ok(GenerationSizes { sizes, complete: true })
    }

    /// All nodes of generation `depth` currently in the arena.
    pub fn generation(&self, depth: u32) -> Vec<NodeId> {
        (0..self.len() as u32)
            .map(NodeId)
            .filter(|&x| self.depth(x) == depth)
            .collect()
    }

    /// Writes one `id,parent,depth,v,realized` record per node; the parent
    /// of the root is written as `-1`.
    pub fn export<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "id,parent,depth,v,realized")?;
        for i in 0..self.len() {
            let p = self.parent[i];
            let p = if p.is_star() { "-1".to_string() } else { p.0.to_string() };
            writeln!(
                out,
                "{},{},{},{},{}",
                i,
                p,
                self.depth[i],
                self.v[i],
                u8::from(self.realized[i])
            )?;
        }
        Ok(())
    }

    /// Reads the format written by [`export`](Self::export). The result
    /// has no law, so unrealized nodes cannot be grown further.
    pub fn import<R: BufRead>(input: R, law: Option<Arc<OffspringLaw>>, seed: u64) -> Result<Self> {
        let mut env = Self::empty(law, seed);
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Parse(format!("line {}: {line}", lineno + 1));
            if f.len() != 5 {
                return Err(bad());
            }
            let id: usize = f[0].parse().map_err(|_| bad())?;
            if id != env.len() {
                return Err(Error::Parse(format!("line {}: ids must be dense", lineno + 1)));
            }
            let parent: i64 = f[1].parse().map_err(|_| bad())?;
            let depth: u32 = f[2].parse().map_err(|_| bad())?;
            let v: f64 = f[3].parse().map_err(|_| bad())?;
            let realized = f[4] == "1";
            let parent = if parent < 0 {
                NodeId::STAR
            } else if (parent as usize) < id {
                NodeId(parent as u32)
            } else {
                return Err(bad());
            };
            env.push_node(parent, depth, v, realized);
        }
        if env.is_empty() {
            return Err(Error::Parse("no nodes".into()));
        }
        env.rebuild_children();
        Ok(env)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::law::DiscreteAtom;

    const LN2: f64 = std::f64::consts::LN_2;

    fn canonical_env(seed: u64) -> Environment {
        Environment::new(Arc::new(OffspringLaw::canonical()), seed)
    }

    #[test]
    fn canonical_leaf_gets_two_children() {
        let mut env = canonical_env(1);
        let kids = env.realize_children(NodeId::ROOT).unwrap();
        assert_eq!(kids.len(), 2);
        for k in &kids {
            assert_eq!(env.depth(*k), 1);
            assert_eq!(env.parent(*k), NodeId::ROOT);
            assert!(env.v(*k).is_finite());
        }
    }

    #[test]
    fn realization_is_idempotent_and_consumes_no_randomness() {
        let mut env = canonical_env(2);
        let a = env.realize_children(NodeId::ROOT).unwrap();
        let rng_before = env.rng.clone();
        let b = env.realize_children(NodeId::ROOT).unwrap();
        assert_eq!(a, b);
        assert_eq!(format!("{:?}", rng_before), format!("{:?}", env.rng));
    }

    #[test]
    fn realize_to_depth_binary_sizes() {
        let mut env = canonical_env(3);
        assert_eq!(env.realize_to_depth(0).unwrap().sizes, vec![1]);
        let g = env.realize_to_depth(10).unwrap();
        assert!(g.complete);
        let expected: Vec<usize> = (0..=10).map(|k| 1 << k).collect();
        assert_eq!(g.sizes, expected);
    }

    #[test]
    fn cap_breach_is_reported() {
        let mut env = canonical_env(4).with_cap(100);
        let g = env.realize_to_depth(10).unwrap();
        assert!(!g.complete);
        assert!(env.len() <= 100);
        let leaf = NodeId(env.len() as u32 - 1);
        assert_eq!(env.ensure_children(leaf), Err(Error::PopulationCap { cap: 100 }));
    }

    #[test]
    fn same_seed_same_environment() {
        let mut a = canonical_env(9);
        let mut b = canonical_env(9);
        a.realize_to_depth(6).unwrap();
        b.realize_to_depth(6).unwrap();
        let (mut ea, mut eb) = (Vec::new(), Vec::new());
        a.export(&mut ea).unwrap();
        b.export(&mut eb).unwrap();
        assert_eq!(ea, eb);
    }

    #[test]
    fn transition_probabilities_of_small_families() {
        let env = Environment::chain(&[0.0, 0.0]).unwrap();
        assert_eq!(env.transition_probs_realized(NodeId::ROOT), vec![0.5, 0.5]);

        let env = Environment::from_parents(&[(None, 0.0), (Some(0), LN2), (Some(0), LN2)]).unwrap();
        let p = env.transition_probs_realized(NodeId::ROOT);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let leaf = NodeId(1);
        assert_eq!(env.transition_probs_realized(leaf), vec![1.0]);
    }

    #[test]
    fn transition_probabilities_survive_extreme_potentials() {
        let env = Environment::from_parents(&[(None, 0.0), (Some(0), -800.0), (Some(1), -1500.0)])
            .unwrap();
        let p = env.transition_probs_realized(NodeId(1));
        assert!(p.iter().all(|x| x.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[1] > 0.999);
    }

    #[test]
    fn export_import_round_trip() {
        let mut env = canonical_env(5);
        env.realize_to_depth(4).unwrap();
        let mut buf = Vec::new();
        env.export(&mut buf).unwrap();
        let back = Environment::import(&buf[..], None, 0).unwrap();
        let mut buf2 = Vec::new();
        back.export(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
        assert_eq!(back.children(NodeId::ROOT), env.children(NodeId::ROOT));
    }

    #[test]
    fn no_law_means_unrealized_nodes_stay_put() {
        let text = "id,parent,depth,v,realized\n0,-1,0,0,0\n";
        let mut env = Environment::import(text.as_bytes(), None, 0).unwrap();
        assert_eq!(env.ensure_children(NodeId::ROOT), Err(Error::NoLaw(NodeId::ROOT)));
    }

    #[test]
    fn random_offspring_mean_generation_size() {
        // N in {1, 3} with equal probability: E[N]^3 = 8.
        let law = Arc::new(
            OffspringLaw::discrete(vec![
                DiscreteAtom { prob: 0.5, displacements: vec![0.5] },
                DiscreteAtom { prob: 0.5, displacements: vec![1.5, 1.5, 1.5] },
            ])
            .unwrap(),
        );
        let reps = 4_000;
        let sizes: Vec<f64> = (0..reps)
            .map(|r| {
                let mut env = Environment::new(law.clone(), 1000 + r);
                env.realize_to_depth(3).unwrap().sizes[3] as f64
            })
            .collect();
        let s = crate::stats::Summary::of(&sizes);
        assert!(s.within(8.0, 3.0), "mean {} se {}", s.mean, s.se());
    }
}
