//! Multi-head causal attention helpers.

use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_nt};
use crate::tensor::Tensor;

/// Projection weights of one attention layer, all `d×d`, no biases.
#[derive(Debug, Clone, Copy)]
pub struct AttentionIds {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

/// `softmax_causal(Q Kᵀ / √d_h) V` per head, followed by the output
/// projection. Inputs are `(batch·seq)×d`.
#[allow(clippy::too_many_arguments)]
pub fn multi_head(
    g: &mut Graph,
    store: &ParamStore,
    ids: AttentionIds,
    q_in: Var,
    k_in: Var,
    v_in: Var,
    heads: usize,
    seq: usize,
) -> Result<Var> {
    let wq = g.param(store, ids.wq);
    let wk = g.param(store, ids.wk);
    let wv = g.param(store, ids.wv);
    let wo = g.param(store, ids.wo);
    let q = g.matmul(q_in, wq)?;
    let k = g.matmul(k_in, wk)?;
    let v = g.matmul(v_in, wv)?;
    let o = g.attention(q, k, v, heads, seq)?;
    g.matmul(o, wo)
}

/// Unfused single-sequence reference built from generic tape ops:
/// per head `softmax(mask(Q_h K_hᵀ)/√d_h) V_h`, heads concatenated.
pub fn attention_unfused(g: &mut Graph, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
    let d = g.value(q).cols();
    if heads == 0 || d % heads != 0 {
        return Err(Error::shape("attention_unfused", format!("width {d} not divisible by {heads} heads")));
    }
    let dh = d / heads;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scaled = g.scale(scores, 1.0 / (dh as f64).sqrt());
        let masked = g.causal_mask(scaled)?;
        let p = g.softmax_rows(masked)?;
        outs.push(g.matmul(p, vh)?);
    }
    g.concat_cols(&outs)
}

/// Plain-tensor single-head causal attention, used as a hand oracle.
pub fn attention_dense(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let d = q.cols();
    let scores = matmul_nt(q, k)?;
    let s = scores.rows();
    let mut p = Tensor::zeros(&[s, s]);
    for i in 0..s {
        let m = (0..=i).map(|j| scores.get(i, j)).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..=i).map(|j| ((scores.get(i, j) - m) / (d as f64).sqrt()).exp()).sum();
        for j in 0..=i {
            p.set(i, j, ((scores.get(i, j) - m) / (d as f64).sqrt()).exp() / z);
        }
    }
    matmul(&p, v)
}
