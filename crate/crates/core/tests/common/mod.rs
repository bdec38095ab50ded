//! Shared fixtures and brute-force oracles. The oracles scan raw event lists
//! and never call the library's query code.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use codcl::model::{gradients, Batch, CfMode, Example, ModelDims, ModelParameters};
use codcl::{Event, Graph, NodeId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random graph with integer timestamps (to force ties) and `d`-dimensional features.
pub fn random_graph(r: &mut ChaCha8Rng, max_nodes: usize, max_events: usize, d: usize) -> Graph {
    let n = r.random_range(3..=max_nodes);
    let m = r.random_range(1..=max_events);
    let horizon = r.random_range(5..=60);
    let mut events = Vec::with_capacity(m);
    for _ in 0..m {
        let u = r.random_range(0..n);
        let mut v = r.random_range(0..n - 1);
        if v >= u {
            v += 1;
        }
        events.push(Event::new(u, v, f64::from(r.random_range(0..=horizon))));
    }
    let feats = (0..n).map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
    Graph::from_events(events, n, false).unwrap().with_node_features(feats).unwrap()
}

pub fn in_window(tau: f64, t: f64, delta: f64) -> bool {
    tau <= t && (delta == 0.0 || tau >= t - delta)
}

pub fn neighbors(events: &[Event], u: NodeId, t: f64, delta: f64) -> BTreeSet<NodeId> {
    let mut out = BTreeSet::new();
    for e in events {
        if !in_window(e.timestamp, t, delta) {
            continue;
        }
        if e.src == u {
            out.insert(e.dst);
        }
        if e.dst == u {
            out.insert(e.src);
        }
    }
    out
}

pub fn common(events: &[Event], u: NodeId, v: NodeId, t: f64, delta: f64) -> usize {
    neighbors(events, u, t, delta)
        .intersection(&neighbors(events, v, t, delta))
        .count()
}

pub fn degree(events: &[Event], u: NodeId, t: f64) -> usize {
    neighbors(events, u, t, 0.0).len()
}

/// BFS over an adjacency matrix of the time-valid snapshot.
pub fn khop(events: &[Event], n: usize, u: NodeId, t: f64, k: usize, delta: f64) -> BTreeMap<NodeId, usize> {
    let mut adj = vec![vec![false; n]; n];
    for e in events {
        if in_window(e.timestamp, t, delta) {
            adj[e.src][e.dst] = true;
            adj[e.dst][e.src] = true;
        }
    }
    let mut dist = vec![usize::MAX; n];
    dist[u] = 0;
    let mut q = VecDeque::from([u]);
    while let Some(x) = q.pop_front() {
        if dist[x] == k {
            continue;
        }
        for y in 0..n {
            if adj[x][y] && dist[y] == usize::MAX {
                dist[y] = dist[x] + 1;
                q.push_back(y);
            }
        }
    }
    (0..n)
        .filter(|&w| w != u && dist[w] != usize::MAX)
        .map(|w| (w, dist[w]))
        .collect()
}

/// Sort, then take index `ceil(p n / 100) - 1`.
pub fn nearest_rank(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let idx = ((p / 100.0) * v.len() as f64).ceil() as usize;
    v[idx.max(1) - 1]
}

/// AP by counting, for each positive, the items ranked at or above it
/// (higher score, or equal score and earlier index).
pub fn ap_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let n = scores.len();
    let ahead = |i: usize, j: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j <= i);
    let mut total = 0.0;
    let mut pos = 0;
    for i in 0..n {
        if !labels[i] {
            continue;
        }
        pos += 1;
        let above = (0..n).filter(|&j| ahead(i, j)).count();
        let hits = (0..n).filter(|&j| labels[j] && ahead(i, j)).count();
        total += hits as f64 / above as f64;
    }
    total / f64::from(pos)
}

/// ROC curve through each distinct threshold, integrated with the trapezoid rule.
pub fn auc_trapezoid(scores: &[f64], labels: &[bool]) -> f64 {
    let p = labels.iter().filter(|l| **l).count() as f64;
    let n = labels.len() as f64 - p;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (mut fpr0, mut tpr0, mut area) = (0.0, 0.0, 0.0);
    for th in thresholds {
        let tp = scores.iter().zip(labels).filter(|(s, l)| **l && **s >= th).count() as f64;
        let fp = scores.iter().zip(labels).filter(|(s, l)| !**l && **s >= th).count() as f64;
        let (fpr, tpr) = (fp / n, tp / p);
        area += (fpr - fpr0) * (tpr + tpr0) / 2.0;
        fpr0 = fpr;
        tpr0 = tpr;
    }
    area
}

pub fn matvec(m: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    (0..rows)
        .map(|r| (0..cols).map(|c| m[r * cols + c] * x[c]).sum())
        .collect()
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// `P_s x_u + mean_{w in N(u, t)} P_n x_w`.
pub fn context_oracle(
    events: &[Event],
    feats: &[Vec<f64>],
    ps: &[f64],
    pn: &[f64],
    d_out: usize,
    u: NodeId,
    t: f64,
) -> Vec<f64> {
    let d = feats[0].len();
    let mut h = matvec(ps, d_out, d, &feats[u]);
    let nb = neighbors(events, u, t, 0.0);
    if !nb.is_empty() {
        for w in &nb {
            for (a, b) in h.iter_mut().zip(matvec(pn, d_out, d, &feats[*w])) {
                *a += b / nb.len() as f64;
            }
        }
    }
    h
}

/// Three nodes, five events, and a mix of examples with and without history.
pub fn fixture3(r: &mut ChaCha8Rng) -> Graph {
    let events = vec![
        Event::new(0, 1, 1.0),
        Event::new(1, 2, 2.0),
        Event::new(0, 2, 3.0),
        Event::new(0, 1, 4.0),
        Event::new(1, 2, 4.5),
    ];
    let feats = (0..3).map(|_| (0..2).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
    Graph::from_events(events, 3, false).unwrap().with_node_features(feats).unwrap()
}

pub fn fixture3_examples(with_cf: bool) -> Vec<Example<f64>> {
    let cf = |c: (NodeId, NodeId, bool)| if with_cf { Some(c) } else { None };
    vec![
        Example { src: 0, dst: 1, neg_dst: 2, t: 5.0, counterfactual: cf((1, 2, true)) },
        Example { src: 1, dst: 2, neg_dst: 0, t: 5.0, counterfactual: cf((0, 2, false)) },
        Example { src: 2, dst: 0, neg_dst: 1, t: 3.5, counterfactual: None },
        Example { src: 0, dst: 1, neg_dst: 2, t: 0.5, counterfactual: cf((2, 1, true)) },
    ]
}

pub fn fixture_dims() -> ModelDims {
    ModelDims { feature_dim: 2, time_dim: 3, hidden_dim: 4, embed_dim: 3 }
}

/// Random parameters with non-trivial biases, phases and normalization affine terms.
pub fn perturbed_params(dims: ModelDims, seed: u64) -> ModelParameters<f64> {
    let mut p = ModelParameters::init(dims, seed);
    let mut r = rng(seed ^ 0xABCD);
    for (name, t) in p.tensors_mut() {
        if name.ends_with("w1") || name.ends_with("w2") || name == "time.freq" {
            continue;
        }
        for x in &mut t.data {
            *x += r.random_range(-0.3..0.3);
        }
    }
    p
}

/// Per-tensor relative error `|a - n| / max(|a|, |n|)` (Euclidean norms) between
/// analytic gradients and central differences with step `h`.
pub fn gradient_check(
    params: &ModelParameters<f64>,
    batch: &Batch<f64>,
    alpha: f64,
    tau: f64,
    mode: CfMode,
    use_time: bool,
    h: f64,
) -> Vec<(&'static str, f64)> {
    let analytic = gradients(params, batch, alpha, tau, mode, use_time).unwrap().grads;
    let loss = |p: &ModelParameters<f64>| gradients(p, batch, alpha, tau, mode, use_time).unwrap().losses.total;
    let mut out = Vec::new();
    for (name, tensor) in params.trainable() {
        let a = &analytic.get(name).unwrap().data;
        let mut num = Vec::with_capacity(tensor.len());
        for i in 0..tensor.len() {
            let mut plus = params.clone();
            plus.get_mut(name).unwrap().data[i] += h;
            let mut minus = params.clone();
            minus.get_mut(name).unwrap().data[i] -= h;
            num.push((loss(&plus) - loss(&minus)) / (2.0 * h));
        }
        let diff = a.iter().zip(&num).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn = num.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = na.max(nn);
        out.push((name, if scale < 1e-12 { diff } else { diff / scale }));
    }
    out
}

/// Brute-force result of the layer-wise counterfactual search for one query.
pub type Pair = (NodeId, NodeId);

#[derive(Debug, Clone)]
pub struct CfOracle {
    /// `(hop, best similarity, candidates attaining it)`; `None` when no layer has a candidate.
    pub found: Option<(usize, f64, Vec<Pair>)>,
    /// Every feasible candidate in the selected layer.
    pub layer: Vec<(NodeId, NodeId)>,
    pub factual: bool,
}

/// Treatment is the strict-past common-neighbor count at or above `theta`;
/// embeddings come from [`context_oracle`]. Ties within 1e-12 all count as optimal.
#[allow(clippy::too_many_arguments)]
pub fn cf_oracle(
    events: &[Event],
    n: usize,
    feats: &[Vec<f64>],
    ps: &[f64],
    pn: &[f64],
    d_out: usize,
    theta: f64,
    u: NodeId,
    v: NodeId,
    t: f64,
    k_max: usize,
) -> CfOracle {
    let treat = |a: NodeId, b: NodeId| common(events, a, b, t, 0.0) as f64 >= theta;
    let factual = treat(u, v);
    let nu = khop(events, n, u, t, k_max, 0.0);
    let nv = khop(events, n, v, t, k_max, 0.0);
    let emb = |w: NodeId| context_oracle(events, feats, ps, pn, d_out, w, t);
    let (hu, hv) = (emb(u), emb(v));
    for k in 1..=k_max {
        let mut layer = Vec::new();
        for (&a, &ha) in &nu {
            for (&b, &hb) in &nv {
                if ha.max(hb) == k && a != b && (a, b) != (u, v) && treat(a, b) != factual {
                    layer.push((a, b));
                }
            }
        }
        if layer.is_empty() {
            continue;
        }
        let sims: Vec<f64> = layer.iter().map(|&(a, b)| 0.5 * (cos(&hu, &emb(a)) + cos(&hv, &emb(b)))).collect();
        let best = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let argmax = layer.iter().zip(&sims).filter(|(_, s)| **s >= best - 1e-12).map(|(p, _)| *p).collect();
        return CfOracle { found: Some((k, best, argmax)), layer, factual };
    }
    CfOracle { found: None, layer: Vec::new(), factual }
}

/// Small random instance for exhaustive search: graph, row-major projections and output width.
pub fn cf_instance(r: &mut ChaCha8Rng) -> (Graph, Vec<f64>, Vec<f64>, usize) {
    let d = r.random_range(1..=3);
    let g = random_graph(r, 14, 100, d);
    let d_out = r.random_range(1..=3);
    let ps = (0..d * d_out).map(|_| r.random_range(-1.0..1.0)).collect();
    let pn = (0..d * d_out).map(|_| r.random_range(-1.0..1.0)).collect();
    (g, ps, pn, d_out)
}

/// Planted synthetic graph small enough for end-to-end runs in a unit test.
pub fn small_synth(seed: u64) -> Graph {
    let cfg = codcl::pipeline::SyntheticConfig {
        nodes: 60,
        communities: 4,
        proposals: 4000,
        duration: 400.0,
        ..Default::default()
    };
    codcl::pipeline::generate_synthetic::<f64>(&cfg, seed).unwrap().graph().unwrap()
}

pub fn small_experiment() -> codcl::pipeline::ExperimentConfig<f64> {
    let mut cfg = codcl::pipeline::ExperimentConfig::<f64> {
        model: codcl::pipeline::ModelShape { time_dim: 4, hidden_dim: 16, embed_dim: 8 },
        ..Default::default()
    };
    cfg.selection_dim = 8;
    cfg.train.epochs = 3;
    cfg.train.batch_size = 100;
    cfg.train.recent_k = 5;
    cfg.train.learning_rate = 5e-3;
    cfg
}
