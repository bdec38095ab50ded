use std::collections::HashMap;

use crate::error::{CodclError, Result};
use crate::scalar::{cosine, sigmoid, Scalar};
use crate::tgraph::{NodeId, TemporalGraph};

use super::params::ModelParameters;
use super::trainer::{CfMode, Losses};
use super::{backbone_input, gather_input, matvec, matvec_t, LOG_CLAMP};

pub(crate) const DEFAULT_BN_EPS: f64 = 1e-5;

pub(crate) struct Encoded<T> {
    input: Vec<T>,
    hidden: Vec<T>,
    pub(crate) output: Vec<T>,
}

pub(crate) fn encode<T: Scalar>(p: &ModelParameters<T>, node: &super::NodeInput<T>, use_time: bool) -> Result<Encoded<T>> {
    let dims = p.dims;
    let input = backbone_input(p, node, use_time)?;
    let hidden: Vec<T> = matvec(&p.enc_w1.data, dims.hidden_dim, dims.input_dim(), &input, &p.enc_b1.data)
        .into_iter()
        .map(|a| a.tanh())
        .collect();
    let output = matvec(&p.enc_w2.data, dims.embed_dim, dims.hidden_dim, &hidden, &p.enc_b2.data);
    Ok(Encoded { input, hidden, output })
}

fn encode_backward<T: Scalar>(
    p: &ModelParameters<T>,
    g: &mut ModelParameters<T>,
    node: &super::NodeInput<T>,
    enc: &Encoded<T>,
    dh: &[T],
    use_time: bool,
) {
    let dims = p.dims;
    let (nh, ni, ne) = (dims.hidden_dim, dims.input_dim(), dims.embed_dim);
    for r in 0..ne {
        g.enc_b2.data[r] += dh[r];
        for (gw, z) in g.enc_w2.data[r * nh..(r + 1) * nh].iter_mut().zip(&enc.hidden) {
            *gw += dh[r] * *z;
        }
    }
    let dz = matvec_t(&p.enc_w2.data, ne, nh, dh);
    let da: Vec<T> = dz.iter().zip(&enc.hidden).map(|(d, z)| *d * (T::one() - *z * *z)).collect();
    for r in 0..nh {
        g.enc_b1.data[r] += da[r];
        for (gw, x) in g.enc_w1.data[r * ni..(r + 1) * ni].iter_mut().zip(&enc.input) {
            *gw += da[r] * *x;
        }
    }
    if !use_time {
        return;
    }
    let off = 2 * dims.feature_dim;
    for i in 0..dims.time_dim {
        let dtime = (0..nh).fold(T::zero(), |acc, r| acc + p.enc_w1.data[r * ni + off + i] * da[r]);
        let (w, b) = (p.time_freq.data[i], p.time_phase.data[i]);
        if node.gaps.is_empty() {
            g.time_phase.data[i] -= dtime * b.sin();
        } else {
            let m = T::from_usize_lossy(node.gaps.len());
            let (mut dw, mut db) = (T::zero(), T::zero());
            for gap in &node.gaps {
                let s = (w * *gap + b).sin();
                dw -= s * *gap;
                db -= s;
            }
            g.time_freq.data[i] += dtime * dw / m;
            g.time_phase.data[i] += dtime * db / m;
        }
    }
}

struct HeadPass<T> {
    z: Vec<Vec<T>>,
    act: Vec<Vec<T>>,
    xhat: Vec<Vec<T>>,
    inv_std: Vec<T>,
    scores: Vec<T>,
    mean: Vec<T>,
    var: Vec<T>,
}

/// Head forward with batch statistics.
fn head_forward<T: Scalar>(p: &ModelParameters<T>, rows: Vec<Vec<T>>) -> HeadPass<T> {
    let d = p.dims.embed_dim;
    let n = T::from_usize_lossy(rows.len());
    let act: Vec<Vec<T>> = rows
        .iter()
        .map(|z| matvec(&p.head_w1.data, d, d, z, &p.head_b1.data).into_iter().map(|a| a.tanh()).collect())
        .collect();
    let resid: Vec<Vec<T>> = rows
        .iter()
        .zip(&act)
        .map(|(z, u)| z.iter().zip(u).map(|(a, b)| *a + *b).collect())
        .collect();
    let mut mean = vec![T::zero(); d];
    for r in &resid {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += *x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![T::zero(); d];
    for r in &resid {
        for j in 0..d {
            let c = r[j] - mean[j];
            var[j] += c * c;
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    let eps = T::lit(DEFAULT_BN_EPS);
    let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
    let xhat: Vec<Vec<T>> = resid
        .iter()
        .map(|r| (0..d).map(|j| (r[j] - mean[j]) * inv_std[j]).collect())
        .collect();
    let scores = xhat
        .iter()
        .map(|x| {
            (0..d).fold(p.head_b2.data[0], |acc, j| {
                acc + p.head_w2.data[j] * (p.bn_gamma.data[j] * x[j] + p.bn_beta.data[j])
            })
        })
        .collect();
    HeadPass {
        z: rows,
        act,
        xhat,
        inv_std,
        scores,
        mean,
        var,
    }
}

/// Returns the gradient with respect to each input row.
fn head_backward<T: Scalar>(p: &ModelParameters<T>, g: &mut ModelParameters<T>, pass: &HeadPass<T>, ds: &[T]) -> Vec<Vec<T>> {
    let d = p.dims.embed_dim;
    let n = pass.z.len();
    let nt = T::from_usize_lossy(n);
    let mut dxhat = vec![vec![T::zero(); d]; n];
    for i in 0..n {
        g.head_b2.data[0] += ds[i];
        for j in 0..d {
            let y = p.bn_gamma.data[j] * pass.xhat[i][j] + p.bn_beta.data[j];
            g.head_w2.data[j] += ds[i] * y;
            let dy = ds[i] * p.head_w2.data[j];
            g.bn_gamma.data[j] += dy * pass.xhat[i][j];
            g.bn_beta.data[j] += dy;
            dxhat[i][j] = dy * p.bn_gamma.data[j];
        }
    }
    let mut sum_dx = vec![T::zero(); d];
    let mut sum_dx_x = vec![T::zero(); d];
    for i in 0..n {
        for j in 0..d {
            sum_dx[j] += dxhat[i][j];
            sum_dx_x[j] += dxhat[i][j] * pass.xhat[i][j];
        }
    }
    let mut dz_rows = Vec::with_capacity(n);
    for i in 0..n {
        let dr: Vec<T> = (0..d)
            .map(|j| pass.inv_std[j] / nt * (nt * dxhat[i][j] - sum_dx[j] - pass.xhat[i][j] * sum_dx_x[j]))
            .collect();
        let da: Vec<T> = dr
            .iter()
            .zip(&pass.act[i])
            .map(|(r, u)| *r * (T::one() - *u * *u))
            .collect();
        for r in 0..d {
            g.head_b1.data[r] += da[r];
            for (gw, z) in g.head_w1.data[r * d..(r + 1) * d].iter_mut().zip(&pass.z[i]) {
                *gw += da[r] * *z;
            }
        }
        let back = matvec_t(&p.head_w1.data, d, d, &da);
        dz_rows.push(dr.iter().zip(&back).map(|(a, b)| *a + *b).collect());
    }
    dz_rows
}

/// Cosine with its gradients; zero vectors give zero similarity and zero gradient.
fn cosine_grad<T: Scalar>(a: &[T], b: &[T]) -> (T, Vec<T>, Vec<T>) {
    let na = a.iter().map(|x| *x * *x).sum::<T>().sqrt();
    let nb = b.iter().map(|x| *x * *x).sum::<T>().sqrt();
    if na == T::zero() || nb == T::zero() {
        return (T::zero(), vec![T::zero(); a.len()], vec![T::zero(); b.len()]);
    }
    let c = cosine(a, b);
    let nab = na * nb;
    let da = a.iter().zip(b).map(|(x, y)| *y / nab - c * *x / (na * na)).collect();
    let db = a.iter().zip(b).map(|(x, y)| *x / nab - c * *y / (nb * nb)).collect();
    (c, da, db)
}

fn axpy<T: Scalar>(dst: &mut [T], scale: T, src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * *s;
    }
}

/// Derivative of `-ln max(σ(s), clamp)` with respect to `s`.
fn d_neg_log_sigmoid<T: Scalar>(s: T) -> T {
    if sigmoid(s) > T::lit(LOG_CLAMP) {
        -sigmoid(-s)
    } else {
        T::zero()
    }
}

/// One training example before input gathering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Example<T> {
    pub src: NodeId,
    pub dst: NodeId,
    pub neg_dst: NodeId,
    pub t: T,
    /// `(u', v', observed)` of the counterfactual pair, if any.
    pub counterfactual: Option<(NodeId, NodeId, bool)>,
}

/// Counterfactual pair as indices into [`Batch::inputs`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CfTarget {
    pub u: usize,
    pub v: usize,
    pub observed: bool,
}

/// Deduplicated backbone inputs plus index pairs for every edge in the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub inputs: Vec<super::NodeInput<T>>,
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
    /// One slot per positive.
    pub counterfactuals: Vec<Option<CfTarget>>,
}

impl<T: Scalar> Batch<T> {
    /// Gathers inputs for every `(node, t)` the examples reference, in first-use order.
    pub fn assemble(graph: &TemporalGraph<T>, examples: &[Example<T>], recent_k: usize) -> Result<Self> {
        let mut slots: HashMap<(NodeId, u64), usize> = HashMap::new();
        let mut keys: Vec<(NodeId, T)> = Vec::new();
        let mut slot = |u: NodeId, t: T| -> usize {
            *slots.entry((u, t.as_f64().to_bits())).or_insert_with(|| {
                keys.push((u, t));
                keys.len() - 1
            })
        };
        let mut positives = Vec::with_capacity(examples.len());
        let mut negatives = Vec::with_capacity(examples.len());
        let mut counterfactuals = Vec::with_capacity(examples.len());
        for ex in examples {
            let a = slot(ex.src, ex.t);
            positives.push((a, slot(ex.dst, ex.t)));
            negatives.push((a, slot(ex.neg_dst, ex.t)));
            counterfactuals.push(ex.counterfactual.map(|(u, v, observed)| CfTarget {
                u: slot(u, ex.t),
                v: slot(v, ex.t),
                observed,
            }));
        }
        let inputs = keys
            .iter()
            .map(|&(u, t)| gather_input(graph, u, t, recent_k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            inputs,
            positives,
            negatives,
            counterfactuals,
        })
    }

    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }

    pub fn coverage(&self) -> usize {
        self.counterfactuals.iter().flatten().count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientOutput<T> {
    pub losses: Losses<T>,
    pub grads: ModelParameters<T>,
    /// Batch mean and biased variance seen by the normalization layer.
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
    pub rows: usize,
}

/// Loss and exact gradient of `α L_f + (1 - α) L_c` for one batch, using batch normalization statistics.
pub fn gradients<T: Scalar>(
    params: &ModelParameters<T>,
    batch: &Batch<T>,
    alpha: T,
    tau: T,
    mode: CfMode,
    use_time: bool,
) -> Result<GradientOutput<T>> {
    if !(tau > T::zero()) {
        return Err(CodclError::config("temperature must be positive"));
    }
    if !(alpha >= T::zero() && alpha <= T::one()) {
        return Err(CodclError::config("alpha must lie in [0, 1]"));
    }
    if batch.negatives.len() != batch.len() || batch.counterfactuals.len() != batch.len() {
        return Err(CodclError::config("batch slots are inconsistent"));
    }
    if batch.is_empty() {
        return Err(CodclError::Empty("training batch".into()));
    }
    let alpha = if mode == CfMode::Off { T::one() } else { alpha };
    let beta = T::one() - alpha;

    let encoded = batch
        .inputs
        .iter()
        .map(|inp| encode(params, inp, use_time))
        .collect::<Result<Vec<_>>>()?;
    let h = |i: usize| &encoded[i].output;
    let hadamard = |(a, b): (usize, usize)| -> Vec<T> { h(a).iter().zip(h(b)).map(|(x, y)| *x * *y).collect() };

    let b = batch.len();
    let pos: Vec<Vec<T>> = batch.positives.iter().map(|&e| hadamard(e)).collect();
    let neg: Vec<Vec<T>> = batch.negatives.iter().map(|&e| hadamard(e)).collect();
    let cf_slots: Vec<(usize, CfTarget)> = if mode == CfMode::Off {
        Vec::new()
    } else {
        batch
            .counterfactuals
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.map(|c| (i, c)))
            .collect()
    };
    let cf: Vec<Vec<T>> = cf_slots.iter().map(|(_, c)| hadamard((c.u, c.v))).collect();

    let mut rows = Vec::with_capacity(2 * b + cf.len());
    rows.extend(pos.iter().cloned());
    rows.extend(neg.iter().cloned());
    if mode == CfMode::Binary {
        rows.extend(cf.iter().cloned());
    }
    let pass = head_forward(params, rows);
    if let Some(i) = pass.scores.iter().position(|s| !s.is_finite()) {
        return Err(CodclError::NonFinite {
            batch: i,
            what: "predictor score".into(),
        });
    }

    let bt = T::from_usize_lossy(b);
    let mut ds = vec![T::zero(); pass.scores.len()];
    let mut factual = T::zero();
    for i in 0..b {
        let (sp, sn) = (pass.scores[i], pass.scores[b + i]);
        factual += super::neg_log(sigmoid(sp)) + super::neg_log(sigmoid(-sn));
        ds[i] = alpha * d_neg_log_sigmoid(sp) / bt;
        ds[b + i] = -alpha * d_neg_log_sigmoid(-sn) / bt;
    }
    factual /= bt;

    let c = cf_slots.len();
    let ct = T::from_usize_lossy(c.max(1));
    let mut contrastive = T::zero();
    let mut dpos = vec![vec![T::zero(); params.dims.embed_dim]; b];
    let mut dneg = dpos.clone();
    let mut dcf = vec![vec![T::zero(); params.dims.embed_dim]; c];
    match mode {
        CfMode::Off => {}
        CfMode::Binary => {
            for (k, (_, target)) in cf_slots.iter().enumerate() {
                let s = pass.scores[2 * b + k];
                let (l, d) = if target.observed {
                    (super::neg_log(sigmoid(s)), d_neg_log_sigmoid(s))
                } else {
                    (super::neg_log(sigmoid(-s)), -d_neg_log_sigmoid(-s))
                };
                contrastive += l;
                ds[2 * b + k] = beta * d / ct;
            }
            contrastive /= ct;
        }
        CfMode::Contrastive => {
            for (k, (i, target)) in cf_slots.iter().enumerate() {
                let (zp, zn, zc) = (&pos[*i], &neg[*i], &cf[k]);
                let (cp, dp_from_cp, dc_from_cp) = cosine_grad(zp, zc);
                let (cn, dp_from_cn, dn_from_cn) = cosine_grad(zp, zn);
                let (a, bb) = (cp / tau, cn / tau);
                let m = a.max(bb);
                let lse = m + ((a - m).exp() + (bb - m).exp()).ln();
                let (pi_p, pi_n) = ((a - lse).exp(), (bb - lse).exp());
                let scale = beta / ct;
                let mut gcp = pi_p / tau;
                let gcn = pi_n / tau;
                if target.observed {
                    contrastive += lse - a;
                    gcp -= T::one() / tau;
                } else {
                    let (cq, dn_from_cq, dc_from_cq) = cosine_grad(zn, zc);
                    contrastive += lse - cq / tau;
                    let gcq = -T::one() / tau;
                    axpy(&mut dneg[*i], scale * gcq, &dn_from_cq);
                    axpy(&mut dcf[k], scale * gcq, &dc_from_cq);
                }
                axpy(&mut dpos[*i], scale * gcp, &dp_from_cp);
                axpy(&mut dcf[k], scale * gcp, &dc_from_cp);
                axpy(&mut dpos[*i], scale * gcn, &dp_from_cn);
                axpy(&mut dneg[*i], scale * gcn, &dn_from_cn);
            }
            contrastive /= ct;
        }
    }

    let mut grads = params.zeros_like();
    let dz_rows = head_backward(params, &mut grads, &pass, &ds);
    for i in 0..b {
        axpy(&mut dpos[i], T::one(), &dz_rows[i]);
        axpy(&mut dneg[i], T::one(), &dz_rows[b + i]);
    }
    if mode == CfMode::Binary {
        for k in 0..c {
            axpy(&mut dcf[k], T::one(), &dz_rows[2 * b + k]);
        }
    }

    let mut dh = vec![vec![T::zero(); params.dims.embed_dim]; batch.inputs.len()];
    let mut edge_back = |(x, y): (usize, usize), dz: &[T]| {
        for j in 0..dz.len() {
            let (hx, hy) = (encoded[x].output[j], encoded[y].output[j]);
            dh[x][j] += dz[j] * hy;
            dh[y][j] += dz[j] * hx;
        }
    };
    for i in 0..b {
        edge_back(batch.positives[i], &dpos[i]);
        edge_back(batch.negatives[i], &dneg[i]);
    }
    for (k, (_, target)) in cf_slots.iter().enumerate() {
        edge_back((target.u, target.v), &dcf[k]);
    }
    for (i, (inp, enc)) in batch.inputs.iter().zip(&encoded).enumerate() {
        if dh[i].iter().any(|x| *x != T::zero()) {
            encode_backward(params, &mut grads, inp, enc, &dh[i], use_time);
        }
    }
    grads.check_finite()?;

    let losses = Losses {
        factual,
        contrastive,
        total: super::total_loss(factual, contrastive, alpha),
    };
    Ok(GradientOutput {
        losses,
        grads,
        batch_mean: pass.mean,
        batch_var: pass.var,
        rows: pass.z.len(),
    })
}
