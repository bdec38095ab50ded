use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CodclError, Result};
use crate::scalar::Scalar;
use crate::tgraph::{NodeId, TemporalEvent, TemporalGraph};

/// Derives an independent stream seed from a base seed and a stream index.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the combined input
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Chronological split: training is `t < boundaries.0`, validation
/// `boundaries.0 <= t < boundaries.1`, test `t >= boundaries.1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec<T> {
    pub boundaries: (T, T),
    /// Nodes withheld from training under the inductive protocol.
    pub inductive_mask: BTreeSet<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Train,
    Val,
    Test,
}

impl<T: Scalar> SplitSpec<T> {
    pub fn part(&self, t: T) -> Part {
        if t < self.boundaries.0 {
            Part::Train
        } else if t < self.boundaries.1 {
            Part::Val
        } else {
            Part::Test
        }
    }

    pub fn is_masked(&self, e: &TemporalEvent<T>) -> bool {
        self.inductive_mask.contains(&e.src) || self.inductive_mask.contains(&e.dst)
    }

    /// Training events that survive the inductive mask.
    pub fn trains_on(&self, e: &TemporalEvent<T>) -> bool {
        self.part(e.timestamp) == Part::Train && !self.is_masked(e)
    }

    pub fn partition<'a>(&self, events: &'a [TemporalEvent<T>]) -> [Vec<&'a TemporalEvent<T>>; 3] {
        let mut out: [Vec<&TemporalEvent<T>>; 3] = Default::default();
        for e in events {
            let slot = match self.part(e.timestamp) {
                Part::Train => 0,
                Part::Val => 1,
                Part::Test => 2,
            };
            out[slot].push(e);
        }
        out
    }
}

/// Cut indices for the ratios with timestamp ties pushed into the later split.
pub fn split_indices<T: Scalar>(events: &[TemporalEvent<T>], ratios: [f64; 3]) -> Result<(usize, usize)> {
    let n = events.len();
    if n < 3 {
        return Err(CodclError::Split(format!("need at least 3 events, got {n}")));
    }
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(CodclError::Split("ratios must be non-negative and sum to 1".into()));
    }
    if events.windows(2).any(|w| w[1].timestamp < w[0].timestamp) {
        return Err(CodclError::Split("events are not time-sorted".into()));
    }
    // tolerance absorbs representation error such as 0.85 * 20 = 16.999...
    let cut = |frac: f64| ((frac * n as f64) + 1e-9).floor() as usize;
    let back = |mut c: usize| {
        while c > 0 && c < n && events[c - 1].timestamp == events[c].timestamp {
            c -= 1;
        }
        c
    };
    let c1 = back(cut(ratios[0]).min(n));
    let c2 = back(cut(ratios[0] + ratios[1]).min(n));
    if c1 == 0 || c2 <= c1 || c2 >= n {
        return Err(CodclError::Split(format!(
            "no valid boundary: timestamp ties leave an empty split (cuts {c1}, {c2} of {n})"
        )));
    }
    Ok((c1, c2))
}

/// Split over time-sorted events with an empty inductive mask.
pub fn chronological_split<T: Scalar>(events: &[TemporalEvent<T>], ratios: [f64; 3]) -> Result<SplitSpec<T>> {
    let (c1, c2) = split_indices(events, ratios)?;
    Ok(SplitSpec {
        boundaries: (events[c1].timestamp, events[c2].timestamp),
        inductive_mask: BTreeSet::new(),
    })
}

/// Samples `floor(fraction * m)` of the `m` nodes active in validation or test.
/// Errors if the mask would leave no training event.
pub fn make_inductive_mask<T: Scalar>(
    events: &[TemporalEvent<T>],
    spec: &SplitSpec<T>,
    fraction: f64,
    seed: u64,
) -> Result<BTreeSet<NodeId>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CodclError::config("eval.inductive_fraction must lie in (0, 1)"));
    }
    let later: BTreeSet<NodeId> = events
        .iter()
        .filter(|e| spec.part(e.timestamp) != Part::Train)
        .flat_map(|e| [e.src, e.dst])
        .collect();
    let pool: Vec<NodeId> = later.into_iter().collect();
    let count = (fraction * pool.len() as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask: BTreeSet<NodeId> = sample(&mut rng, pool.len(), count).into_iter().map(|i| pool[i]).collect();
    let masked = SplitSpec {
        boundaries: spec.boundaries,
        inductive_mask: mask,
    };
    if !events.iter().any(|e| masked.trains_on(e)) {
        return Err(CodclError::Split("inductive mask removes every training event".into()));
    }
    Ok(masked.inductive_mask)
}

/// One negative destination per positive: uniform over `universe` minus the
/// positive destination (and the source unless self-loops are allowed).
/// `universe` must be sorted and deduplicated.
pub fn sample_negatives<T: Scalar>(
    positives: &[(NodeId, NodeId, T)],
    universe: &[NodeId],
    allow_self_loops: bool,
    seed: u64,
    batch_index: u64,
) -> Result<Vec<(NodeId, NodeId)>> {
    if universe.len() < 3 {
        return Err(CodclError::Split(format!(
            "negative sampling needs at least 3 nodes, got {}",
            universe.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, batch_index));
    positives
        .iter()
        .map(|&(u, v, _)| {
            let mut excluded: Vec<usize> = Vec::with_capacity(2);
            if let Ok(i) = universe.binary_search(&v) {
                excluded.push(i);
            }
            if !allow_self_loops && u != v {
                if let Ok(i) = universe.binary_search(&u) {
                    excluded.push(i);
                }
            }
            excluded.sort_unstable();
            let avail = universe.len() - excluded.len();
            // draw a rank among the allowed entries, then step over excluded slots
            let mut idx = rng.random_range(0..avail);
            for &x in &excluded {
                if idx >= x {
                    idx += 1;
                }
            }
            Ok((u, universe[idx]))
        })
        .collect()
}

/// Number of log-spaced degree buckets used for featureless datasets.
pub const DEGREE_BUCKETS: usize = 8;

/// One-hot `floor(log2(1 + degree))` bucket per node, degrees counted over
/// the given events only. Bucket index is capped at `DEGREE_BUCKETS - 1`.
pub fn degree_bucket_features<'a, T: Scalar>(
    num_nodes: usize,
    events: impl IntoIterator<Item = &'a TemporalEvent<T>>,
) -> Vec<Vec<T>> {
    let mut degree = vec![0usize; num_nodes];
    for e in events {
        degree[e.src] += 1;
        if e.dst != e.src {
            degree[e.dst] += 1;
        }
    }
    degree
        .into_iter()
        .map(|d| {
            let b = ((usize::BITS - (d + 1).leading_zeros()) as usize - 1).min(DEGREE_BUCKETS - 1);
            let mut v = vec![T::zero(); DEGREE_BUCKETS];
            v[b] = T::one();
            v
        })
        .collect()
}

/// Nodes with at least one event in the iterator, sorted.
pub fn node_universe<'a, T: Scalar + 'a>(events: impl IntoIterator<Item = &'a TemporalEvent<T>>) -> Vec<NodeId> {
    let set: BTreeSet<NodeId> = events.into_iter().flat_map(|e| [e.src, e.dst]).collect();
    set.into_iter().collect()
}

/// Graph over the given event filter with the node universe of `graph`.
pub fn subgraph<T: Scalar>(graph: &TemporalGraph<T>, keep: impl Fn(&TemporalEvent<T>) -> bool) -> TemporalGraph<T> {
    graph.restrict(|_, e| keep(e))
}
