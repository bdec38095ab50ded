//! Reference backbone, predictor head and training objective.
//!
//! A node embedding is `h = W2 tanh(W1 [x_u | mean_K x_w | enc(Δt)] + b1) + b2`,
//! where the neighbor mean runs over the `K` most recent interactions strictly
//! before the query time and `enc` averages `cos(ω Δt + b)` over their gaps.
//! Edges are Hadamard products of endpoint embeddings. The head maps an edge
//! vector `z` to a logit through `tanh(A z + a) + z`, batch normalization and a
//! final linear layer.
//!
//! Gradients are computed by hand; see the finite-difference checks in the
//! test suite.

mod backprop;
mod checkpoint;
mod params;
mod trainer;

pub use backprop::{gradients, Batch, CfTarget, Example, GradientOutput};
pub use checkpoint::{export_json, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, MAGIC};
pub use params::{ModelDims, ModelParameters, Tensor, BUFFERS, TRAINABLE};
pub use trainer::{train_step, Ablations, AdamState, CfMode, Losses, TrainConfig, Trainer};

use rayon::prelude::*;

use crate::error::{CodclError, Result};
use crate::scalar::{sigmoid, Scalar};
use crate::tgraph::{NodeId, TemporalGraph};

/// Lower clamp applied to probabilities before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;

/// Raw backbone inputs for one node at one query time.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeInput<T> {
    pub features: Vec<T>,
    /// Mean feature vector of the recent neighbors; zeros without history.
    pub neighbor_mean: Vec<T>,
    /// `t - τ` for each recent interaction, newest first.
    pub gaps: Vec<T>,
}

/// Collects the inputs for `u` from its `k` most recent interactions strictly before `t`.
pub fn gather_input<T: Scalar>(graph: &TemporalGraph<T>, u: NodeId, t: T, k: usize) -> Result<NodeInput<T>> {
    let features = graph.node_feature(u)?.to_vec();
    let mut neighbor_mean = vec![T::zero(); features.len()];
    let mut gaps = Vec::new();
    for inc in graph.recent_before(u, t, k)? {
        for (m, x) in neighbor_mean.iter_mut().zip(graph.node_feature(inc.other)?) {
            *m += *x;
        }
        gaps.push(t - inc.time);
    }
    if !gaps.is_empty() {
        let n = T::from_usize_lossy(gaps.len());
        neighbor_mean.iter_mut().for_each(|m| *m /= n);
    }
    Ok(NodeInput {
        features,
        neighbor_mean,
        gaps,
    })
}

pub(crate) fn matvec<T: Scalar>(w: &[T], rows: usize, cols: usize, x: &[T], bias: &[T]) -> Vec<T> {
    (0..rows)
        .map(|r| {
            let row = &w[r * cols..(r + 1) * cols];
            row.iter().zip(x).fold(bias[r], |acc, (a, b)| acc + *a * *b)
        })
        .collect()
}

/// `W^T y` for row-major `W` of shape `rows x cols`.
pub(crate) fn matvec_t<T: Scalar>(w: &[T], rows: usize, cols: usize, y: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); cols];
    for r in 0..rows {
        let yr = y[r];
        if yr == T::zero() {
            continue;
        }
        for (o, a) in out.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
            *o += *a * yr;
        }
    }
    out
}

pub(crate) fn time_encoding<T: Scalar>(params: &ModelParameters<T>, gaps: &[T], use_time: bool) -> Vec<T> {
    let freq = &params.time_freq.data;
    let phase = &params.time_phase.data;
    if !use_time {
        return vec![T::zero(); freq.len()];
    }
    if gaps.is_empty() {
        return phase.iter().map(|b| b.cos()).collect();
    }
    let m = T::from_usize_lossy(gaps.len());
    freq.iter()
        .zip(phase)
        .map(|(w, b)| gaps.iter().map(|g| (*w * *g + *b).cos()).sum::<T>() / m)
        .collect()
}

pub(crate) fn backbone_input<T: Scalar>(params: &ModelParameters<T>, input: &NodeInput<T>, use_time: bool) -> Result<Vec<T>> {
    let d = params.dims.feature_dim;
    if input.features.len() != d || input.neighbor_mean.len() != d {
        return Err(CodclError::Dimension {
            expected: d,
            got: input.features.len(),
        });
    }
    let mut x = Vec::with_capacity(params.dims.input_dim());
    x.extend_from_slice(&input.features);
    x.extend_from_slice(&input.neighbor_mean);
    x.extend(time_encoding(params, &input.gaps, use_time));
    Ok(x)
}

/// Backbone forward pass on prepared inputs.
pub fn embed_input<T: Scalar>(params: &ModelParameters<T>, input: &NodeInput<T>, use_time: bool) -> Result<Vec<T>> {
    Ok(backprop::encode(params, input, use_time)?.output)
}

/// Embedding `h_u(t)` from history strictly before `t`.
pub fn embed<T: Scalar>(
    u: NodeId,
    t: T,
    graph: &TemporalGraph<T>,
    params: &ModelParameters<T>,
    recent_k: usize,
    use_time: bool,
) -> Result<Vec<T>> {
    embed_input(params, &gather_input(graph, u, t, recent_k)?, use_time)
}

/// Element-wise product of two embeddings.
pub fn edge_representation<T: Scalar>(h_u: &[T], h_v: &[T]) -> Result<Vec<T>> {
    if h_u.len() != h_v.len() {
        return Err(CodclError::Dimension {
            expected: h_u.len(),
            got: h_v.len(),
        });
    }
    Ok(h_u.iter().zip(h_v).map(|(a, b)| *a * *b).collect())
}

/// Head logits using the running normalization statistics. Rows are scored independently.
pub fn score_rows<T: Scalar>(params: &ModelParameters<T>, rows: &[Vec<T>], batch: usize) -> Result<Vec<T>> {
    let d = params.dims.embed_dim;
    let eps = T::lit(backprop::DEFAULT_BN_EPS);
    let mut out = Vec::with_capacity(rows.len());
    for z in rows {
        if z.len() != d {
            return Err(CodclError::Dimension { expected: d, got: z.len() });
        }
        let a = matvec(&params.head_w1.data, d, d, z, &params.head_b1.data);
        let mut s = params.head_b2.data[0];
        for j in 0..d {
            let r = a[j].tanh() + z[j];
            let xhat = (r - params.bn_running_mean.data[j]) / (params.bn_running_var.data[j] + eps).sqrt();
            let y = params.bn_gamma.data[j] * xhat + params.bn_beta.data[j];
            s += params.head_w2.data[j] * y;
        }
        if !s.is_finite() {
            return Err(CodclError::NonFinite {
                batch,
                what: "predictor score".into(),
            });
        }
        out.push(s);
    }
    Ok(out)
}

/// Evaluation-mode logit for one edge representation.
pub fn predict_score<T: Scalar>(z: &[T], params: &ModelParameters<T>) -> Result<T> {
    Ok(score_rows(params, std::slice::from_ref(&z.to_vec()), 0)?[0])
}

/// Evaluation-mode logits for `(u, v, t)` queries, each using history strictly before `t`.
/// Parallel across queries; output follows input order.
pub fn score_queries<T: Scalar>(
    params: &ModelParameters<T>,
    graph: &TemporalGraph<T>,
    queries: &[(NodeId, NodeId, T)],
    recent_k: usize,
    use_time: bool,
) -> Result<Vec<T>> {
    let rows = queries
        .par_iter()
        .map(|&(u, v, t)| {
            let hu = embed(u, t, graph, params, recent_k, use_time)?;
            let hv = embed(v, t, graph, params, recent_k, use_time)?;
            edge_representation(&hu, &hv)
        })
        .collect::<Result<Vec<_>>>()?;
    score_rows(params, &rows, 0)
}

fn neg_log<T: Scalar>(p: T) -> T {
    -p.max(T::lit(LOG_CLAMP)).ln()
}

/// Mean over pairs of `-[ln σ(s_pos) + ln(1 - σ(s_neg))]`.
pub fn factual_loss<T: Scalar>(pos_scores: &[T], neg_scores: &[T]) -> Result<T> {
    if pos_scores.len() != neg_scores.len() {
        return Err(CodclError::Dimension {
            expected: pos_scores.len(),
            got: neg_scores.len(),
        });
    }
    if pos_scores.is_empty() {
        return Ok(T::zero());
    }
    let total: T = pos_scores
        .iter()
        .zip(neg_scores)
        .map(|(p, n)| neg_log(sigmoid(*p)) + neg_log(sigmoid(-*n)))
        .sum();
    Ok(total / T::from_usize_lossy(pos_scores.len()))
}

/// Per-element InfoNCE value from its three cosines:
/// `-ln( e^{c_psi/τ} / (e^{c_pos/τ} + e^{c_neg/τ}) )`.
pub fn infonce_from_cosines<T: Scalar>(c_psi: T, c_pos: T, c_neg: T, tau: T) -> T {
    let (a, b) = (c_pos / tau, c_neg / tau);
    let m = a.max(b);
    let lse = m + ((a - m).exp() + (b - m).exp()).ln();
    lse - c_psi / tau
}

/// One factual/counterfactual/negative triple for the contrastive loss.
#[derive(Debug, Clone, Copy)]
pub struct ContrastiveTriple<'a, T> {
    pub pos: &'a [T],
    pub cf: &'a [T],
    pub neg: &'a [T],
    /// The counterfactual pair was observed; selects `ψ = z_pos` instead of `ψ = z_neg`.
    pub observed: bool,
}

/// Mean InfoNCE term over the triples; zero for an empty list.
pub fn contrastive_loss<T: Scalar>(triples: &[ContrastiveTriple<'_, T>], tau: T) -> Result<T> {
    if !(tau > T::zero()) {
        return Err(CodclError::config("temperature must be positive"));
    }
    if triples.is_empty() {
        return Ok(T::zero());
    }
    let total: T = triples
        .iter()
        .map(|tr| {
            let c_pos = crate::scalar::cosine(tr.pos, tr.cf);
            let c_neg = crate::scalar::cosine(tr.pos, tr.neg);
            let c_psi = if tr.observed {
                c_pos
            } else {
                crate::scalar::cosine(tr.neg, tr.cf)
            };
            infonce_from_cosines(c_psi, c_pos, c_neg, tau)
        })
        .sum();
    Ok(total / T::from_usize_lossy(triples.len()))
}

/// `α L_f + (1 - α) L_c`.
pub fn total_loss<T: Scalar>(factual: T, contrastive: T, alpha: T) -> T {
    alpha * factual + (T::one() - alpha) * contrastive
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tgraph::TemporalEvent;
    use approx::assert_abs_diff_eq;

    fn zero_params(d: usize, dh: usize) -> ModelParameters<f64> {
        let dims = ModelDims {
            feature_dim: d,
            time_dim: 2,
            hidden_dim: 3,
            embed_dim: dh,
        };
        ModelParameters::init(dims, 0).zeros_like_with_unit_var()
    }

    impl ModelParameters<f64> {
        fn zeros_like_with_unit_var(&self) -> Self {
            let mut p = self.zeros_like();
            p.bn_running_var.data.iter_mut().for_each(|v| *v = 1.0);
            p
        }
    }

    #[test]
    fn zero_head_scores_one_half() {
        let p = zero_params(2, 3);
        let s = predict_score(&[0.3, -1.0, 2.0], &p).unwrap();
        assert_eq!(s, 0.0);
        assert_eq!(sigmoid(s), 0.5);
    }

    #[test]
    fn hadamard_cases() {
        assert_eq!(edge_representation(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap(), vec![4.0, 10.0, 18.0]);
        assert_eq!(edge_representation(&[1.5, -2.0], &[1.0, 1.0]).unwrap(), vec![1.5, -2.0]);
        assert_eq!(edge_representation(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), vec![0.0, 0.0]);
        assert!(edge_representation(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn factual_loss_at_zero_is_two_ln2() {
        let l = factual_loss(&[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(l, 2.0 * std::f64::consts::LN_2, epsilon = 1e-12);
        let far = factual_loss(&[60.0], &[-60.0]).unwrap();
        assert!(far < 1e-20);
        assert!(factual_loss(&[0.0], &[]).is_err());
    }

    #[test]
    fn contrastive_hand_triple() {
        let v = infonce_from_cosines(0.8, 0.8, -0.2, 1.0);
        assert_abs_diff_eq!(v, (1.0 + (-1.0f64).exp()).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(v, 0.313262, epsilon = 1e-6);
        assert_abs_diff_eq!(infonce_from_cosines(0.3, 0.3, 0.3, 0.5), std::f64::consts::LN_2, epsilon = 1e-12);
        assert!(contrastive_loss::<f64>(&[], 0.0).is_err());
        assert_eq!(contrastive_loss::<f64>(&[], 1.0).unwrap(), 0.0);
    }

    #[test]
    fn total_loss_endpoints() {
        assert_eq!(total_loss(0.4, 0.2, 1.0), 0.4);
        assert_eq!(total_loss(0.4, 0.2, 0.0), 0.2);
        assert_abs_diff_eq!(total_loss(0.4, 0.2, 0.5), 0.3, epsilon = 1e-15);
    }

    #[test]
    fn empty_history_uses_zero_neighbors_and_phase() {
        let g = TemporalGraph::from_events(vec![TemporalEvent::new(0, 1, 5.0)], 3, false)
            .unwrap()
            .with_node_features(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]])
            .unwrap();
        let inp = gather_input(&g, 2, 10.0, 4).unwrap();
        assert_eq!(inp.neighbor_mean, vec![0.0, 0.0]);
        assert!(inp.gaps.is_empty());
        // strictly-before: the event at t = 5 is invisible at t = 5
        assert!(gather_input(&g, 0, 5.0, 4).unwrap().gaps.is_empty());
        let seen = gather_input(&g, 0, 7.0, 4).unwrap();
        assert_eq!(seen.neighbor_mean, vec![0.0, 1.0]);
        assert_eq!(seen.gaps, vec![2.0]);
    }
}
