//! The quenched nearest-neighbour walk on an [`Environment`], organised by
//! excursions away from the virtual parent `rho*`.

use std::io::Write;

use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::env::{Environment, NodeId};
use crate::error::{Error, Result};
use crate::seed::SimRng;
use crate::stats::{binomial_se, ConstantEstimate};

/// What to do when an excursion or a replica exceeds its step budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CapAction {
    /// Return [`Error::StepCap`]; the caller drops the replica.
    #[default]
    AbortReplica,
    /// Stop the excursion, mark it truncated and carry on with the next.
    RecordTruncation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepCapPolicy {
    pub max_steps_per_excursion: u64,
    pub max_total_steps: u64,
    pub action: CapAction,
}

impl Default for StepCapPolicy {
    fn default() -> Self {
        Self {
            max_steps_per_excursion: 100_000_000,
            max_total_steps: 1_000_000_000,
            action: CapAction::AbortReplica,
        }
    }
}

impl StepCapPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps_per_excursion == 0 || self.max_total_steps == 0 {
            return Err(Error::InvalidArgument("step caps must be at least 1".into()));
        }
        Ok(())
    }
}

/// State and tables of one walk. Tables are dense over node ids and grow
/// with the environment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WalkRecord {
    /// `L_x`: number of parent-to-child crossings of the edge `(x*, x)`.
    pub local_time: Vec<u64>,
    /// `E_x`: number of completed excursions that visited `x`.
    pub visits: Vec<u32>,
    /// Index (1-based) of the last excursion that visited each node.
    epoch: Vec<u32>,
    pub excursion_lengths: Vec<u64>,
    pub excursions: u32,
    pub total_steps: u64,
    /// Parent-to-child steps, `rho* -> rho` included.
    pub down_steps: u64,
    /// Child-to-parent steps, `rho -> rho*` included.
    pub up_steps: u64,
    pub truncated_excursions: u32,
    pub max_depth: u32,
    pub current: NodeId,
}

impl Default for WalkRecord {
    fn default() -> Self {
        Self::new()
    }
}

/// Outcome of a single excursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcursionSummary {
    pub length: u64,
    pub nodes_visited: u64,
    pub truncated: bool,
}

impl WalkRecord {
    /// A walk sitting at `rho*` before its first excursion.
    pub fn new() -> Self {
        Self {
            local_time: Vec::new(),
            visits: Vec::new(),
            epoch: Vec::new(),
            excursion_lengths: Vec::new(),
            excursions: 0,
            total_steps: 0,
            down_steps: 0,
            up_steps: 0,
            truncated_excursions: 0,
            max_depth: 0,
            current: NodeId::STAR,
        }
    }

    #[inline]
    pub fn local_time_of(&self, x: NodeId) -> u64 {
        self.local_time.get(x.index()).copied().unwrap_or(0)
    }

    #[inline]
    pub fn visits_of(&self, x: NodeId) -> u32 {
        self.visits.get(x.index()).copied().unwrap_or(0)
    }

    /// Ids of every node visited at least once.
    pub fn visited(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.visits
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0)
            .map(|(i, _)| NodeId(i as u32))
    }

    pub fn range(&self) -> usize {
        self.visits.iter().filter(|&&v| v > 0).count()
    }

    #[inline]
    fn grow(&mut self, len: usize) {
        if self.local_time.len() < len {
            let target = len.max(self.local_time.len() * 2);
            self.local_time.resize(target, 0);
            self.visits.resize(target, 0);
            self.epoch.resize(target, 0);
        }
    }

    #[inline]
    fn enter(&mut self, x: NodeId) {
        let i = x.index();
        self.local_time[i] += 1;
        if self.epoch[i] != self.excursions + 1 {
            self.epoch[i] = self.excursions + 1;
            self.visits[i] += 1;
        }
    }

    /// Writes `node,depth,v,local_time,visits` for every visited node,
    /// preceded by a `# {json}` metadata line.
    pub fn export_csv<W: Write>(&self, env: &Environment, seed: u64, mut out: W) -> Result<()> {
        let meta = serde_json::json!({
            "seed": seed,
            "n": self.excursions,
            "tau_n": self.total_steps,
            "truncated_excursions": self.truncated_excursions,
            "max_depth": self.max_depth,
        });
        writeln!(out, "# {meta}")?;
        writeln!(out, "node,depth,v,local_time,visits")?;
        for x in self.visited() {
            writeln!(
                out,
                "{},{},{},{},{}",
                x.0,
                env.depth(x),
                env.v(x),
                self.local_time_of(x),
                self.visits_of(x)
            )?;
        }
        Ok(())
    }
}

/// Transition probabilities out of `node` in the order
/// `[parent, child_1, ..]`. At `rho*` the walk moves to `rho` surely.
pub fn transition(env: &mut Environment, node: NodeId) -> Result<Vec<f64>> {
    if node.is_star() {
        return Ok(vec![1.0]);
    }
    env.ensure_children(node)?;
    Ok(env.transition_probs_realized(node))
}

#[inline]
fn step(env: &mut Environment, x: NodeId, rng: &mut SimRng) -> Result<Option<NodeId>> {
    let u: f64 = rng.random();
    let cum = env.cumulative_transition(x)?;
    let idx = cum.partition_point(|&c| c <= u);
    if idx == 0 {
        Ok(None)
    } else {
        Ok(Some(env.children(x)[idx - 1]))
    }
}

/// Runs one excursion `rho* -> rho -> ... -> rho*`. Both forced steps at
/// `rho*` are counted in the length, so a root without children gives an
/// excursion of length 2.
pub fn run_excursion(
    env: &mut Environment,
    walk: &mut WalkRecord,
    rng: &mut SimRng,
    policy: &StepCapPolicy,
) -> Result<ExcursionSummary> {
    if !walk.current.is_star() {
        return Err(Error::InvalidArgument("walk must start the excursion at rho*".into()));
    }
    walk.grow(env.len());
    let mut length = 1u64;
    let mut visited = 1u64;
    walk.down_steps += 1;
    walk.enter(NodeId::ROOT);
    let mut x = NodeId::ROOT;
    let mut depth = 0u32;
    let mut truncated = false;
    loop {
        if length >= policy.max_steps_per_excursion
            || walk.total_steps + length >= policy.max_total_steps
        {
            truncated = true;
            break;
        }
        length += 1;
        match step(env, x, rng)? {
            None => {
                walk.up_steps += 1;
                if x == NodeId::ROOT {
                    break;
                }
                x = env.parent(x);
                depth -= 1;
            }
            Some(y) => {
                walk.down_steps += 1;
                if y.index() >= walk.local_time.len() {
                    walk.grow(env.len());
                }
                let fresh = walk.epoch[y.index()] != walk.excursions + 1;
                walk.enter(y);
                visited += u64::from(fresh);
                x = y;
                depth += 1;
                walk.max_depth = walk.max_depth.max(depth);
            }
        }
    }
    walk.total_steps += length;
    walk.excursion_lengths.push(length);
    walk.excursions += 1;
    walk.current = NodeId::STAR;
    if truncated {
        walk.truncated_excursions += 1;
        if policy.action == CapAction::AbortReplica {
            return Err(Error::StepCap { steps: walk.total_steps });
        }
    }
    Ok(ExcursionSummary { length, nodes_visited: visited, truncated })
}

/// Runs `n` excursions on a fresh record.
pub fn run_n_excursions(
    env: &mut Environment,
    n: u32,
    rng: &mut SimRng,
    policy: &StepCapPolicy,
) -> Result<WalkRecord> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    policy.validate()?;
    let mut walk = WalkRecord::new();
    for _ in 0..n {
        run_excursion(env, &mut walk, rng, policy)?;
    }
    Ok(walk)
}

/// Monte Carlo estimate of `P_rho(T_x < T_{rho*})`: each replica walks
/// from `rho` until it reaches `x` or steps to `rho*`.
pub fn estimate_hitting_probability(
    env: &mut Environment,
    x: NodeId,
    replicas: u64,
    rng: &mut SimRng,
) -> Result<ConstantEstimate> {
    if !env.contains(x) {
        return Err(Error::UnknownNode(x));
    }
    let mut hits = 0u64;
    for _ in 0..replicas {
        let mut y = NodeId::ROOT;
        loop {
            if y == x {
                hits += 1;
                break;
            }
            match step(env, y, rng)? {
                None if y == NodeId::ROOT => break,
                None => y = env.parent(y),
                Some(c) => y = c,
            }
        }
    }
    let p = hits as f64 / replicas as f64;
    Ok(ConstantEstimate::new("hitting_probability", p, binomial_se(hits, replicas), replicas, "walk-mc")
        .with_param("node", x.0 as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn transition_examples() {
        let mut env = Environment::chain(&[0.0, 0.0]).unwrap();
        assert_eq!(transition(&mut env, NodeId::ROOT).unwrap(), vec![0.5, 0.5]);
        assert_eq!(transition(&mut env, NodeId(1)).unwrap(), vec![1.0]);
        assert_eq!(transition(&mut env, NodeId::STAR).unwrap(), vec![1.0]);

        let mut env =
            Environment::from_parents(&[(None, 0.0), (Some(0), LN2), (Some(0), LN2)]).unwrap();
        let p = transition(&mut env, NodeId::ROOT).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15);
        assert!((p[1] - 0.25).abs() < 1e-15 && (p[2] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn leafless_root_excursions() {
        let mut env = Environment::chain(&[0.0]).unwrap();
        let mut rng = stream(1, &[]);
        let w = run_n_excursions(&mut env, 3, &mut rng, &StepCapPolicy::default()).unwrap();
        assert_eq!(w.total_steps, 6);
        assert_eq!(w.local_time_of(NodeId::ROOT), 3);
        assert_eq!(w.visits_of(NodeId::ROOT), 3);
        assert_eq!(w.excursion_lengths, vec![2, 2, 2]);
    }

    #[test]
    fn counting_identities_hold() {
        let mut env = Environment::new(std::sync::Arc::new(crate::law::OffspringLaw::canonical()), 5);
        let mut rng = stream(2, &[]);
        let w = run_n_excursions(&mut env, 200, &mut rng, &StepCapPolicy::default()).unwrap();
        assert_eq!(w.local_time_of(NodeId::ROOT), 200);
        assert_eq!(w.down_steps, w.up_steps);
        assert_eq!(w.down_steps + w.up_steps, w.total_steps);
        assert_eq!(w.local_time.iter().sum::<u64>(), w.down_steps);
        assert_eq!(w.excursion_lengths.iter().sum::<u64>(), w.total_steps);
        for x in w.visited() {
            assert!(w.visits_of(x) as u64 <= w.local_time_of(x).min(200));
            if x != NodeId::ROOT {
                assert!(w.visits_of(x) <= w.visits_of(env.parent(x)));
            }
        }
    }

    #[test]
    fn truncation_is_recorded_or_aborts() {
        let mut env = Environment::new(std::sync::Arc::new(crate::law::OffspringLaw::canonical()), 3);
        let mut rng = stream(3, &[]);
        let policy = StepCapPolicy {
            max_steps_per_excursion: 3,
            max_total_steps: 1_000,
            action: CapAction::RecordTruncation,
        };
        let mut w = WalkRecord::new();
        let mut truncs = 0;
        for _ in 0..50 {
            truncs += u32::from(run_excursion(&mut env, &mut w, &mut rng, &policy).unwrap().truncated);
        }
        assert!(truncs > 0);
        assert_eq!(truncs, w.truncated_excursions);
        assert!(w.excursion_lengths.iter().all(|&l| l <= 3));

        let abort = StepCapPolicy { action: CapAction::AbortReplica, ..policy };
        let res = (0..50).try_for_each(|_| run_excursion(&mut env, &mut WalkRecord::new(), &mut rng, &abort).map(|_| ()));
        assert!(matches!(res, Err(Error::StepCap { .. })));
    }

    #[test]
    fn gamblers_ruin_hitting_probabilities() {
        let mut env = Environment::chain(&[0.0, 0.0, 0.0]).unwrap();
        let mut rng = stream(4, &[]);
        let e1 = estimate_hitting_probability(&mut env, NodeId(1), 100_000, &mut rng).unwrap();
        let e2 = estimate_hitting_probability(&mut env, NodeId(2), 100_000, &mut rng).unwrap();
        assert!(e1.within(0.5, 4.0), "{e1:?}");
        assert!(e2.within(1.0 / 3.0, 4.0), "{e2:?}");
    }

    #[test]
    fn csv_export_has_metadata_header() {
        let mut env = Environment::chain(&[0.0, 0.5]).unwrap();
        let mut rng = stream(5, &[]);
        let w = run_n_excursions(&mut env, 10, &mut rng, &StepCapPolicy::default()).unwrap();
        let mut buf = Vec::new();
        w.export_csv(&env, 5, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let first = text.lines().next().unwrap();
        let meta: serde_json::Value = serde_json::from_str(first.trim_start_matches("# ")).unwrap();
        assert_eq!(meta["n"], 10);
        assert_eq!(text.lines().nth(1).unwrap(), "node,depth,v,local_time,visits");
    }
}
