//! Counterfactual pair search.
//!
//! For a factual event `(u, v, t)` the search expands the k-hop neighborhoods
//! of both endpoints layer by layer and, at the first layer holding a pair of
//! opposite treatment, returns the pair whose endpoints are most similar to
//! `u` and `v` in a fixed context-embedding space.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CodclError, Result};
use crate::scalar::{cosine, Scalar};
use crate::tgraph::{NodeId, TemporalEvent, TemporalGraph};
use crate::treatment::{event_cutoff, FittedTreatment, TreatmentSlice};

/// Fixed linear maps for the node and neighbor terms of the context embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionEncoder<T> {
    d_in: usize,
    d_out: usize,
    /// Row-major `d_out x d_in`.
    proj_self: Vec<T>,
    proj_neighbor: Vec<T>,
}

impl<T: Scalar> SelectionEncoder<T> {
    /// Standard normal entries scaled by `1/sqrt(d_in)`.
    pub fn seeded(d_in: usize, d_out: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = if d_in == 0 { 0.0 } else { 1.0 / (d_in as f64).sqrt() };
        let mut draw = |n: usize| -> Vec<T> {
            (0..n)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    T::lit(z * scale)
                })
                .collect()
        };
        let proj_self = draw(d_in * d_out);
        let proj_neighbor = draw(d_in * d_out);
        Self {
            d_in,
            d_out,
            proj_self,
            proj_neighbor,
        }
    }

    pub fn identity(d: usize) -> Self {
        let mut m = vec![T::zero(); d * d];
        for i in 0..d {
            m[i * d + i] = T::one();
        }
        Self {
            d_in: d,
            d_out: d,
            proj_self: m.clone(),
            proj_neighbor: m,
        }
    }

    pub fn from_matrices(d_in: usize, d_out: usize, proj_self: Vec<T>, proj_neighbor: Vec<T>) -> Result<Self> {
        for m in [&proj_self, &proj_neighbor] {
            if m.len() != d_in * d_out {
                return Err(CodclError::Dimension {
                    expected: d_in * d_out,
                    got: m.len(),
                });
            }
        }
        Ok(Self {
            d_in,
            d_out,
            proj_self,
            proj_neighbor,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.d_in
    }

    pub fn output_dim(&self) -> usize {
        self.d_out
    }

    fn apply(&self, m: &[T], x: &[T]) -> Vec<T> {
        m.chunks_exact(self.d_in.max(1))
            .take(self.d_out)
            .map(|row| row.iter().zip(x).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    pub fn project_self(&self, x: &[T]) -> Vec<T> {
        if self.d_in == 0 {
            return vec![T::zero(); self.d_out];
        }
        self.apply(&self.proj_self, x)
    }

    pub fn project_neighbor(&self, x: &[T]) -> Vec<T> {
        if self.d_in == 0 {
            return vec![T::zero(); self.d_out];
        }
        self.apply(&self.proj_neighbor, x)
    }

    /// Pre-projects every node's features; the mean over neighbors commutes with the linear map.
    pub fn project_graph(&self, graph: &TemporalGraph<T>) -> Result<ProjectedFeatures<T>> {
        if graph.feature_dim() != self.d_in {
            return Err(CodclError::Dimension {
                expected: self.d_in,
                got: graph.feature_dim(),
            });
        }
        let mut own = Vec::with_capacity(graph.num_nodes());
        let mut nbr = Vec::with_capacity(graph.num_nodes());
        for u in 0..graph.num_nodes() {
            let x = graph.node_feature(u)?;
            own.push(self.project_self(x));
            nbr.push(self.project_neighbor(x));
        }
        Ok(ProjectedFeatures {
            own,
            neighbor: nbr,
            dim: self.d_out,
        })
    }
}

/// Node features pushed through both projections once per run.
#[derive(Debug, Clone)]
pub struct ProjectedFeatures<T> {
    own: Vec<Vec<T>>,
    neighbor: Vec<Vec<T>>,
    dim: usize,
}

impl<T: Scalar> ProjectedFeatures<T> {
    fn embed(&self, graph: &TemporalGraph<T>, u: NodeId, t: T) -> Result<Vec<T>> {
        let mut h = self.own[u].clone();
        let nbrs = graph.neighbor_vec(u, t, T::zero())?;
        if !nbrs.is_empty() {
            let mut mean = vec![T::zero(); self.dim];
            for &w in &nbrs {
                for (m, &x) in mean.iter_mut().zip(&self.neighbor[w]) {
                    *m += x;
                }
            }
            let n = T::from_usize_lossy(nbrs.len());
            for (a, m) in h.iter_mut().zip(mean) {
                *a += m / n;
            }
        }
        Ok(h)
    }
}

/// Context embedding of a node at a query time.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextEmbedding<T> {
    pub vector: Vec<T>,
    pub node: NodeId,
    pub query_time: T,
}

/// `proj_self(x_u) + mean_{w in N_u(t)} proj_neighbor(x_w)`; the mean term is
/// zero for a node with no neighbors at or before `t`.
pub fn context_embedding<T: Scalar>(
    u: NodeId,
    t: T,
    graph: &TemporalGraph<T>,
    encoder: &SelectionEncoder<T>,
) -> Result<ContextEmbedding<T>> {
    let x = graph.node_feature(u)?;
    if x.len() != encoder.input_dim() {
        return Err(CodclError::Dimension {
            expected: encoder.input_dim(),
            got: x.len(),
        });
    }
    let mut vector = encoder.project_self(x);
    let nbrs = graph.neighbor_vec(u, t, T::zero())?;
    if !nbrs.is_empty() {
        let mut mean = vec![T::zero(); x.len()];
        for &w in &nbrs {
            for (m, &f) in mean.iter_mut().zip(graph.node_feature(w)?) {
                *m += f;
            }
        }
        let n = T::from_usize_lossy(nbrs.len());
        mean.iter_mut().for_each(|m| *m /= n);
        for (a, b) in vector.iter_mut().zip(encoder.project_neighbor(&mean)) {
            *a += b;
        }
    }
    Ok(ContextEmbedding {
        vector,
        node: u,
        query_time: t,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionPolicy {
    /// Maximize the mean endpoint cosine similarity.
    MaxSimilarity,
    /// Uniform draw among the candidates of the selected layer.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig<T> {
    pub k_max: usize,
    /// Optimize over every layer up to `k_max` instead of stopping at the first non-empty one.
    pub global_argmax: bool,
    /// Window of the neighbor relation used for hop expansion; zero is full history.
    pub delta: T,
    /// Window in which an observed counterfactual-pair event counts as "exists"; zero is full history.
    pub state_window: T,
    pub policy: SelectionPolicy,
    pub seed: u64,
    /// Worker threads; zero uses all available cores.
    pub workers: usize,
}

impl<T: Scalar> Default for SearchConfig<T> {
    fn default() -> Self {
        Self {
            k_max: 2,
            global_argmax: false,
            delta: T::zero(),
            state_window: T::zero(),
            policy: SelectionPolicy::MaxSimilarity,
            seed: 0,
            workers: 0,
        }
    }
}

/// Candidate counterfactual pair and the hop at which it appears.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Candidate {
    pub hop: usize,
    pub u: NodeId,
    pub v: NodeId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualAssignment<T> {
    pub u: NodeId,
    pub v: NodeId,
    /// Query time (inclusive cutoff) the search ran at.
    pub t: T,
    pub counterfactual: Option<(NodeId, NodeId)>,
    /// Mean endpoint cosine, zero when absent.
    pub similarity: T,
    /// Hop at which the counterfactual was found, zero when absent.
    pub hop: usize,
    /// The counterfactual pair interacted inside the state window.
    pub cf_observed: bool,
    pub factual_treatment: bool,
}

impl<T: Scalar> CounterfactualAssignment<T> {
    fn absent(u: NodeId, v: NodeId, t: T, factual_treatment: bool) -> Self {
        Self {
            u,
            v,
            t,
            counterfactual: None,
            similarity: T::zero(),
            hop: 0,
            cf_observed: false,
            factual_treatment,
        }
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        Err(CodclError::config("hop count must be at least 1"))
    } else {
        Ok(())
    }
}

/// Enumerates opposite-treatment pairs in `nu x nv` in `(hop, u', v')` order.
fn enumerate_candidates<T: Scalar>(
    u: NodeId,
    v: NodeId,
    nu: &BTreeMap<NodeId, usize>,
    nv: &BTreeMap<NodeId, usize>,
    hop_filter: impl Fn(usize) -> bool,
    slice: &TreatmentSlice<'_, T>,
    factual: bool,
) -> Result<Vec<Candidate>> {
    let mut out = Vec::new();
    for (&a, &ha) in nu {
        for (&b, &hb) in nv {
            let hop = ha.max(hb);
            if a == b || (a == u && b == v) || !hop_filter(hop) {
                continue;
            }
            if slice.treatment(a, b)? != factual {
                out.push(Candidate { hop, u: a, v: b });
            }
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// All pairs `(u', v')` from the `k`-hop neighborhoods of `u` and `v` at time
/// `t` whose treatment differs from the factual pair's, ordered by hop.
pub fn candidate_pairs<T: Scalar>(
    u: NodeId,
    v: NodeId,
    t: T,
    k: usize,
    graph: &TemporalGraph<T>,
    treatments: &FittedTreatment<T>,
    delta: T,
) -> Result<Vec<Candidate>> {
    check_k(k)?;
    let slice = treatments.slice(graph, t);
    let factual = slice.treatment(u, v)?;
    let nu = graph.khop_nodes(u, t, k, delta)?;
    let nv = graph.khop_nodes(v, t, k, delta)?;
    enumerate_candidates(u, v, &nu, &nv, |_| true, &slice, factual)
}

/// Counterfactual search over graph, treatments and projected features.
pub struct CounterfactualSearch<'a, T> {
    graph: &'a TemporalGraph<T>,
    treatments: &'a FittedTreatment<T>,
    features: ProjectedFeatures<T>,
    config: SearchConfig<T>,
}

impl<'a, T: Scalar> CounterfactualSearch<'a, T> {
    pub fn new(
        graph: &'a TemporalGraph<T>,
        treatments: &'a FittedTreatment<T>,
        encoder: &SelectionEncoder<T>,
        config: SearchConfig<T>,
    ) -> Result<Self> {
        check_k(config.k_max)?;
        Ok(Self {
            graph,
            treatments,
            features: encoder.project_graph(graph)?,
            config,
        })
    }

    pub fn config(&self) -> &SearchConfig<T> {
        &self.config
    }

    /// Counterfactual for `(u, v)` at query time `t`. `stream` seeds the uniform policy.
    pub fn select(&self, u: NodeId, v: NodeId, t: T, stream: u64) -> Result<CounterfactualAssignment<T>> {
        let g = self.graph;
        let cfg = &self.config;
        let slice = self.treatments.slice(g, t);
        let factual = slice.treatment(u, v)?;
        let nu = g.khop_nodes(u, t, cfg.k_max, cfg.delta)?;
        let nv = g.khop_nodes(v, t, cfg.k_max, cfg.delta)?;

        let mut pool: Vec<Candidate> = Vec::new();
        for k in 1..=cfg.k_max {
            let layer = enumerate_candidates(u, v, &nu, &nv, |h| h == k, &slice, factual)?;
            pool.extend(layer);
            if !pool.is_empty() && !cfg.global_argmax {
                break;
            }
        }
        if pool.is_empty() {
            return Ok(CounterfactualAssignment::absent(u, v, t, factual));
        }

        let mut cache: HashMap<NodeId, Vec<T>> = HashMap::new();
        let mut embed = |w: NodeId| -> Result<Vec<T>> {
            if let Some(h) = cache.get(&w) {
                return Ok(h.clone());
            }
            let h = self.features.embed(g, w, t)?;
            cache.insert(w, h.clone());
            Ok(h)
        };
        let hu = embed(u)?;
        let hv = embed(v)?;
        let half = T::lit(0.5);
        let mut score = |c: &Candidate| -> Result<T> {
            let a = embed(c.u)?;
            let b = embed(c.v)?;
            Ok(half * (cosine(&hu, &a) + cosine(&hv, &b)))
        };

        let (chosen, similarity) = match cfg.policy {
            SelectionPolicy::MaxSimilarity => {
                // pool is sorted by (hop, u', v'), so strict improvement keeps the tie-break order
                let mut best = pool[0];
                let mut best_sim = score(&best)?;
                for c in &pool[1..] {
                    let s = score(c)?;
                    if s > best_sim {
                        best = *c;
                        best_sim = s;
                    }
                }
                (best, best_sim)
            }
            SelectionPolicy::Uniform => {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let c = pool[rng.random_range(0..pool.len())];
                (c, score(&c)?)
            }
        };
        let lo = if cfg.state_window == T::zero() {
            None
        } else {
            Some(t - cfg.state_window)
        };
        let cf_observed = g.pair_active_in(chosen.u, chosen.v, lo, t)?;
        Ok(CounterfactualAssignment {
            u,
            v,
            t,
            counterfactual: Some((chosen.u, chosen.v)),
            similarity,
            hop: chosen.hop,
            cf_observed,
            factual_treatment: factual,
        })
    }

    /// One assignment per event, searched strictly before each event's timestamp.
    /// Output order follows input order regardless of worker count.
    pub fn augment(&self, events: &[TemporalEvent<T>]) -> Result<Augmentation<T>> {
        let run = || -> Result<Vec<CounterfactualAssignment<T>>> {
            events
                .par_iter()
                .enumerate()
                .map(|(i, e)| self.select(e.src, e.dst, event_cutoff(e.timestamp), i as u64))
                .collect()
        };
        let assignments = if self.config.workers == 0 {
            run()?
        } else {
            rayon::ThreadPoolBuilder::new()
                .num_threads(self.config.workers)
                .build()
                .map_err(|e| CodclError::config(format!("worker pool: {e}")))?
                .install(run)?
        };
        let summary = AugmentSummary::from_assignments(&assignments, self.config.k_max);
        Ok(Augmentation { assignments, summary })
    }
}

/// Convenience wrapper over [`CounterfactualSearch::select`].
pub fn select_counterfactual<T: Scalar>(
    u: NodeId,
    v: NodeId,
    t: T,
    graph: &TemporalGraph<T>,
    treatments: &FittedTreatment<T>,
    encoder: &SelectionEncoder<T>,
    config: &SearchConfig<T>,
) -> Result<CounterfactualAssignment<T>> {
    CounterfactualSearch::new(graph, treatments, encoder, config.clone())?.select(u, v, t, 0)
}

/// Convenience wrapper over [`CounterfactualSearch::augment`].
pub fn augment_split<T: Scalar>(
    events: &[TemporalEvent<T>],
    graph: &TemporalGraph<T>,
    treatments: &FittedTreatment<T>,
    encoder: &SelectionEncoder<T>,
    config: &SearchConfig<T>,
) -> Result<Augmentation<T>> {
    CounterfactualSearch::new(graph, treatments, encoder, config.clone())?.augment(events)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSummary {
    pub events: usize,
    /// Fraction of events with a counterfactual; 0 for an empty split.
    pub coverage: f64,
    pub mean_similarity: f64,
    /// `hop_histogram[k]` counts counterfactuals found at hop `k` (index 0 unused).
    pub hop_histogram: Vec<usize>,
    pub observed: usize,
}

impl AugmentSummary {
    pub fn from_assignments<T: Scalar>(assignments: &[CounterfactualAssignment<T>], k_max: usize) -> Self {
        let mut hop_histogram = vec![0; k_max + 1];
        let mut found = 0usize;
        let mut observed = 0usize;
        let mut sim = 0.0;
        for a in assignments {
            if a.counterfactual.is_some() {
                found += 1;
                sim += a.similarity.as_f64();
                hop_histogram[a.hop] += 1;
                observed += usize::from(a.cf_observed);
            }
        }
        Self {
            events: assignments.len(),
            coverage: if assignments.is_empty() {
                0.0
            } else {
                found as f64 / assignments.len() as f64
            },
            mean_similarity: if found == 0 { 0.0 } else { sim / found as f64 },
            hop_histogram,
            observed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Augmentation<T> {
    pub assignments: Vec<CounterfactualAssignment<T>>,
    pub summary: AugmentSummary,
}
