//! Planted-treatment generator.
//!
//! Nodes are split into communities, each node gets a few "friends" inside its
//! community, and a pair's planted statistic is its number of common friends.
//! Candidate interactions are proposed uniformly in time (a mix of friend pairs,
//! within-community pairs and arbitrary pairs) and accepted with probability
//! `p0 * e^(β T)`, where `T` is the planted treatment. The friend pairs keep
//! the observed common-neighbor counts close to the planted ones.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CodclError, Result};
use crate::scalar::Scalar;
use crate::tgraph::{NodeId, TemporalEvent, TemporalGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub nodes: usize,
    pub communities: usize,
    /// Friends drawn per node inside its community (the relation is symmetric, so degrees end up larger).
    pub friends: usize,
    /// Common-friend count at or above which a pair is treated.
    pub planted_theta: usize,
    pub duration: f64,
    /// Number of proposed interactions before thinning.
    pub proposals: usize,
    /// Base acceptance probability.
    pub base_rate: f64,
    /// Log-multiplier of the acceptance probability for treated pairs.
    pub beta: f64,
    /// Share of proposals that are friend pairs.
    pub friend_share: f64,
    /// Share of the remaining proposals kept inside one community.
    pub community_bias: f64,
    /// Standard deviation of the noise added to the community one-hot features.
    pub feature_noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            nodes: 500,
            communities: 10,
            friends: 3,
            planted_theta: 2,
            duration: 1000.0,
            proposals: 40_000,
            base_rate: 0.25,
            beta: 1.0,
            friend_share: 0.3,
            community_bias: 0.7,
            feature_noise: 0.5,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes < 3 || self.communities == 0 || self.communities > self.nodes {
            return Err(CodclError::config("synth: need >= 3 nodes and 1..=nodes communities"));
        }
        if self.nodes / self.communities < 2 {
            return Err(CodclError::config("synth: communities need at least 2 members"));
        }
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(CodclError::config("synth.duration must be positive"));
        }
        if !self.beta.is_finite() {
            return Err(CodclError::config("synth.beta must be finite"));
        }
        let hi = self.base_rate * self.beta.max(0.0).exp();
        if !(self.base_rate > 0.0) || hi > 1.0 {
            return Err(CodclError::config(format!(
                "infeasible rates: acceptance p0 * e^max(β,0) = {hi} must lie in (0, 1]"
            )));
        }
        for (name, v) in [("friend_share", self.friend_share), ("community_bias", self.community_bias)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CodclError::config(format!("synth.{name} must lie in [0, 1]")));
            }
        }
        if !(self.feature_noise >= 0.0) {
            return Err(CodclError::config("synth.feature_noise must be >= 0"));
        }
        Ok(())
    }
}

/// Proposal and acceptance counts per treatment arm, for effect-size checks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ArmCounts {
    pub proposed: usize,
    pub accepted: usize,
}

impl ArmCounts {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData<T> {
    /// Time-sorted events with ids `0..nodes` (no renumbering applied).
    pub events: Vec<TemporalEvent<T>>,
    pub node_features: Vec<Vec<T>>,
    pub community: Vec<usize>,
    /// Unordered pairs `(min, max)` whose planted treatment is 1.
    pub treated_pairs: BTreeSet<(NodeId, NodeId)>,
    pub treated: ArmCounts,
    pub untreated: ArmCounts,
}

impl<T: Scalar> SyntheticData<T> {
    pub fn is_treated(&self, u: NodeId, v: NodeId) -> bool {
        self.treated_pairs.contains(&(u.min(v), u.max(v)))
    }

    /// Empirical acceptance-rate ratio treated / untreated.
    pub fn rate_ratio(&self) -> f64 {
        self.treated.rate() / self.untreated.rate()
    }

    pub fn graph(&self) -> Result<TemporalGraph<T>> {
        TemporalGraph::from_events(self.events.clone(), self.node_features.len(), false)?
            .with_node_features(self.node_features.clone())
    }
}

pub fn generate_synthetic<T: Scalar>(config: &SyntheticConfig, seed: u64) -> Result<SyntheticData<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.nodes;
    let c = config.communities;
    let community: Vec<usize> = (0..n).map(|u| u % c).collect();
    let members: Vec<Vec<NodeId>> = (0..c).map(|k| (k..n).step_by(c).collect()).collect();

    let mut friends: Vec<BTreeSet<NodeId>> = vec![BTreeSet::new(); n];
    for u in 0..n {
        let pool: Vec<NodeId> = members[community[u]].iter().copied().filter(|&w| w != u).collect();
        let k = config.friends.min(pool.len());
        for i in sample(&mut rng, pool.len(), k) {
            let w = pool[i];
            friends[u].insert(w);
            friends[w].insert(u);
        }
    }
    let friend_pairs: Vec<(NodeId, NodeId)> = (0..n)
        .flat_map(|u| friends[u].iter().filter(move |&&w| w > u).map(move |&w| (u, w)))
        .collect();

    let mut common: BTreeMap<(NodeId, NodeId), usize> = BTreeMap::new();
    for fs in &friends {
        let fs: Vec<NodeId> = fs.iter().copied().collect();
        for (i, &a) in fs.iter().enumerate() {
            for &b in &fs[i + 1..] {
                *common.entry((a, b)).or_default() += 1;
            }
        }
    }
    let treated_pairs: BTreeSet<(NodeId, NodeId)> = common
        .into_iter()
        .filter(|(_, k)| *k >= config.planted_theta)
        .map(|(p, _)| p)
        .collect();

    let mut times: Vec<f64> = (0..config.proposals)
        .map(|_| rng.random_range(0.0..config.duration))
        .collect();
    times.sort_by(f64::total_cmp);

    let p_treated = config.base_rate * config.beta.exp();
    let mut treated = ArmCounts::default();
    let mut untreated = ArmCounts::default();
    let mut events = Vec::new();
    for t in times {
        let (u, v) = if !friend_pairs.is_empty() && rng.random_bool(config.friend_share) {
            let (a, b) = friend_pairs[rng.random_range(0..friend_pairs.len())];
            if rng.random_bool(0.5) {
                (a, b)
            } else {
                (b, a)
            }
        } else {
            let u = rng.random_range(0..n);
            let v = loop {
                let w = if rng.random_bool(config.community_bias) {
                    let m = &members[community[u]];
                    m[rng.random_range(0..m.len())]
                } else {
                    rng.random_range(0..n)
                };
                if w != u {
                    break w;
                }
            };
            (u, v)
        };
        let is_treated = treated_pairs.contains(&(u.min(v), u.max(v)));
        let arm = if is_treated { &mut treated } else { &mut untreated };
        arm.proposed += 1;
        let p = if is_treated { p_treated } else { config.base_rate };
        if rng.random_bool(p.min(1.0)) {
            arm.accepted += 1;
            events.push(TemporalEvent::new(u, v, T::lit(t)));
        }
    }
    if events.is_empty() {
        return Err(CodclError::Empty("synthetic process accepted no events".into()));
    }

    let node_features = (0..n)
        .map(|u| {
            (0..c)
                .map(|k| {
                    let hot = if community[u] == k { 1.0 } else { 0.0 };
                    let noise: f64 = rng.sample(StandardNormal);
                    T::lit(hot + config.feature_noise * noise)
                })
                .collect()
        })
        .collect();

    Ok(SyntheticData {
        events,
        node_features,
        community,
        treated_pairs,
        treated,
        untreated,
    })
}
