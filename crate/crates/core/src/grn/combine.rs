//! Fused GRN combination kernels with hand-written gradients.
//!
//! Every column is an `n×d` block (`n` tokens or examples, `d` features);
//! a `d`-vector counts as `n = 1`. Outputs accumulate columns in
//! [`fold_order`]: stored outputs first, input last. With all-ones weights
//! this reproduces the left fold `f_1 + f_2 + … + x` bit for bit.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::GrnVariant;

/// Accumulation order over `t` stack columns: `1, 2, …, t-1, 0`.
pub fn fold_order(t: usize) -> impl Iterator<Item = usize> {
    (1..t).chain(std::iter::once(0).take(t.min(1)))
}

pub struct CombineForward {
    pub out: Tensor,
    /// `n×t` gate pre-activations `wᵀ G` for V3, row-major.
    pub gate_pre: Option<Vec<f64>>,
}

pub struct CombineBackward {
    pub d_cols: Vec<Tensor>,
    pub d_b: Tensor,
    pub d_w: Option<Tensor>,
}

fn check(cols: &[&Tensor], variant: GrnVariant, b: &Tensor, w: Option<&Tensor>) -> Result<(usize, usize)> {
    let first = cols
        .first()
        .ok_or_else(|| Error::shape("grn_combine", "empty stack"))?;
    let (n, d) = (first.rows(), first.cols());
    for (j, c) in cols.iter().enumerate() {
        if c.shape() != first.shape() {
            return Err(Error::shape(
                "grn_combine",
                format!("column {j} has shape {:?}, column 0 has {:?}", c.shape(), first.shape()),
            ));
        }
    }
    let t = cols.len();
    match variant {
        GrnVariant::V1 => {
            if b.len() != t || b.rank() > 1 {
                return Err(Error::shape(
                    "grn_combine",
                    format!("v1 weights {:?} for stack width {t}", b.shape()),
                ));
            }
        }
        GrnVariant::V2 | GrnVariant::V3 => {
            if b.shape() != [d, t] {
                return Err(Error::shape(
                    "grn_combine",
                    format!("weights {:?} for stack {d}x{t}", b.shape()),
                ));
            }
        }
    }
    match (variant, w) {
        (GrnVariant::V3, Some(w)) if w.len() == d && w.rank() == 1 => {}
        (GrnVariant::V3, Some(w)) => {
            return Err(Error::shape("grn_combine", format!("gate weights {:?}, expected [{d}]", w.shape())))
        }
        (GrnVariant::V3, None) => return Err(Error::shape("grn_combine", "v3 needs gate weights")),
        (_, Some(_)) => return Err(Error::shape("grn_combine", "gate weights are v3 only")),
        (_, None) => {}
    }
    Ok((n, d))
}

pub fn combine_forward(
    cols: &[&Tensor],
    variant: GrnVariant,
    b: &Tensor,
    w: Option<&Tensor>,
) -> Result<CombineForward> {
    let (n, d) = check(cols, variant, b, w)?;
    let t = cols.len();
    let bd = b.data();
    let gate_pre = w.map(|w| {
        let wd = w.data();
        let mut u = vec![0.0; n * t];
        for (j, c) in cols.iter().enumerate() {
            let cd = c.data();
            for r in 0..n {
                let mut acc = 0.0;
                for i in 0..d {
                    acc += wd[i] * cd[r * d + i];
                }
                u[r * t + j] = acc;
            }
        }
        u
    });
    let mut out = vec![0.0; n * d];
    for j in fold_order(t) {
        let cd = cols[j].data();
        for r in 0..n {
            let gate = gate_pre.as_ref().map_or(0.0, |u| relu(u[r * t + j]));
            for i in 0..d {
                let coef = match variant {
                    GrnVariant::V1 => bd[j],
                    GrnVariant::V2 => bd[i * t + j],
                    GrnVariant::V3 => bd[i * t + j] + gate,
                };
                out[r * d + i] += cd[r * d + i] * coef;
            }
        }
    }
    Ok(CombineForward {
        out: Tensor::new(cols[0].shape().to_vec(), out)?,
        gate_pre,
    })
}

pub fn combine_backward(
    cols: &[&Tensor],
    variant: GrnVariant,
    b: &Tensor,
    w: Option<&Tensor>,
    gate_pre: Option<&[f64]>,
    grad_out: &Tensor,
) -> Result<CombineBackward> {
    let (n, d) = check(cols, variant, b, w)?;
    cols[0].expect_same_shape(grad_out, "grn_combine backward")?;
    let t = cols.len();
    let bd = b.data();
    let g = grad_out.data();
    let mut d_b = vec![0.0; b.len()];
    let mut d_w = w.map(|_| vec![0.0; d]);
    let mut d_cols = Vec::with_capacity(t);
    for (j, c) in cols.iter().enumerate() {
        let cd = c.data();
        let mut dc = vec![0.0; n * d];
        for r in 0..n {
            let (gate, open) = match gate_pre {
                Some(u) => (relu(u[r * t + j]), u[r * t + j] > 0.0),
                None => (0.0, false),
            };
            let mut d_gate = 0.0;
            for i in 0..d {
                let gy = g[r * d + i];
                let x = cd[r * d + i];
                let coef = match variant {
                    GrnVariant::V1 => {
                        d_b[j] += gy * x;
                        bd[j]
                    }
                    GrnVariant::V2 => {
                        d_b[i * t + j] += gy * x;
                        bd[i * t + j]
                    }
                    GrnVariant::V3 => {
                        d_b[i * t + j] += gy * x;
                        d_gate += gy * x;
                        bd[i * t + j] + gate
                    }
                };
                dc[r * d + i] = gy * coef;
            }
            if let (true, Some(w), Some(dw)) = (open, w, d_w.as_mut()) {
                let wd = w.data();
                for i in 0..d {
                    dw[i] += d_gate * cd[r * d + i];
                    dc[r * d + i] += d_gate * wd[i];
                }
            }
        }
        d_cols.push(Tensor::new(c.shape().to_vec(), dc)?);
    }
    Ok(CombineBackward {
        d_cols,
        d_b: Tensor::new(b.shape().to_vec(), d_b)?,
        d_w: d_w.map(Tensor::vector),
    })
}

#[inline]
fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}
