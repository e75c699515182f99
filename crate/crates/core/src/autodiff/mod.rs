//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is rebuilt for every forward pass. Nodes are appended in
//! evaluation order, so the tape order is already topological and
//! [`Graph::backward`] walks it in reverse. Matrices are `rows×cols`; row
//! vectors used for broadcasting may be rank 1.

mod gradcheck;
mod optim;

pub use gradcheck::{check_gradient, GradCheckReport, DEFAULT_STEP as DEFAULT_GRAD_STEP};
pub use optim::{AdamW, ParamId, ParamStore, Schedule, Sgd};

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::grn::combine::{combine_backward, combine_forward};
use crate::grn::GrnVariant;
use crate::linalg::{matmul, matmul_nt, matmul_tn};
use crate::tensor::Tensor;

/// Handle to a node of one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Relu(Var),
    SoftmaxRows(Var),
    CausalMask(Var),
    LayerNormRows { x: Var, xhat: Tensor, rstd: Vec<f64> },
    Gather { table: Var, ids: Vec<usize> },
    Sum(Var),
    Mean(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Tensor },
    Transpose(Var),
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Grn {
        cols: Vec<Var>,
        variant: GrnVariant,
        b: Var,
        w: Option<Var>,
        gate_pre: Option<Vec<f64>>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        seq: usize,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by one backward pass, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a registered parameter; zeros-free `None` when the
    /// parameter did not influence the output.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, v)| self.get(*v))
    }

    /// `(param, gradient)` pairs in the order parameters entered the graph.
    pub fn param_grads(&self) -> Vec<(ParamId, &Tensor)> {
        self.params
            .iter()
            .filter_map(|(p, v)| self.get(*v).map(|g| (*p, g)))
            .collect()
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_vars: Vec<(ParamId, Var)>,
    param_lookup: HashMap<ParamId, Var>,
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

fn row_len_check(x: &Tensor, r: &Tensor, op: &'static str) -> Result<()> {
    x.expect_matrix(op)?;
    if r.len() != x.cols() || r.rank() > 2 || (r.rank() == 2 && r.rows() != 1) {
        return Err(Error::shape(op, format!("row {:?} against matrix {:?}", r.shape(), x.shape())));
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Input that receives a gradient.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_lookup.get(&id) {
            return v;
        }
        let v = self.leaf(store.value(id).clone());
        self.param_lookup.insert(id, v);
        self.param_vars.push((id, v));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = matmul(self.value(a), self.value(b))?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), ng))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        let ng = self.needs(&[a]);
        self.push(value, Op::Scale(a, c), ng)
    }

    /// `x + 1·rᵀ`: adds a row vector to every row.
    pub fn add_row(&mut self, x: Var, r: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(r));
        row_len_check(xv, rv, "add_row")?;
        let c = xv.cols();
        let rd = rv.data();
        let mut out = xv.clone();
        for (k, o) in out.data_mut().iter_mut().enumerate() {
            *o += rd[k % c];
        }
        let ng = self.needs(&[x, r]);
        Ok(self.push(out, Op::AddRow(x, r), ng))
    }

    /// Multiplies every row elementwise by a row vector.
    pub fn mul_row(&mut self, x: Var, r: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(r));
        row_len_check(xv, rv, "mul_row")?;
        let c = xv.cols();
        let rd = rv.data();
        let mut out = xv.clone();
        for (k, o) in out.data_mut().iter_mut().enumerate() {
            *o *= rd[k % c];
        }
        let ng = self.needs(&[x, r]);
        Ok(self.push(out, Op::MulRow(x, r), ng))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(relu);
        let ng = self.needs(&[x]);
        self.push(value, Op::Relu(x), ng)
    }

    /// Row-wise softmax; entries equal to `-inf` get probability zero.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        xv.expect_matrix("softmax_rows")?;
        let (n, c) = (xv.rows(), xv.cols());
        if c == 0 {
            return Err(Error::shape("softmax_rows", "empty axis"));
        }
        let mut out = vec![0.0; n * c];
        for r in 0..n {
            softmax_into(xv.row(r), &mut out[r * c..(r + 1) * c])?;
        }
        let value = Tensor::matrix(n, c, out)?;
        let ng = self.needs(&[x]);
        Ok(self.push(value, Op::SoftmaxRows(x), ng))
    }

    /// Sets entries strictly above the diagonal of a square matrix to `-inf`.
    pub fn causal_mask(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        xv.expect_square("causal_mask")?;
        let n = xv.rows();
        let mut out = xv.clone();
        for i in 0..n {
            for j in (i + 1)..n {
                out.set(i, j, f64::NEG_INFINITY);
            }
        }
        let ng = self.needs(&[x]);
        Ok(self.push(out, Op::CausalMask(x), ng))
    }

    /// Row-wise normalisation to zero mean and unit variance, without the
    /// affine part: `(x - μ) / sqrt(σ² + eps)`.
    pub fn layernorm_rows(&mut self, x: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        xv.expect_matrix("layernorm_rows")?;
        let (n, c) = (xv.rows(), xv.cols());
        if c == 0 {
            return Err(Error::shape("layernorm_rows", "empty axis"));
        }
        let mut xhat = vec![0.0; n * c];
        let mut rstd = Vec::with_capacity(n);
        for r in 0..n {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + eps).sqrt();
            for (k, v) in row.iter().enumerate() {
                xhat[r * c + k] = (v - mean) * s;
            }
            rstd.push(s);
        }
        let xhat = Tensor::matrix(n, c, xhat)?;
        let ng = self.needs(&[x]);
        Ok(self.push(xhat.clone(), Op::LayerNormRows { x, xhat, rstd }, ng))
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        tv.expect_matrix("gather")?;
        let (v, c) = (tv.rows(), tv.cols());
        let mut out = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= v {
                return Err(Error::InvalidArgument(format!("gather: index {id} out of range for {v} rows")));
            }
            out.extend_from_slice(tv.row(id));
        }
        let value = Tensor::matrix(ids.len(), c, out)?;
        let ng = self.needs(&[table]);
        Ok(self.push(value, Op::Gather { table, ids: ids.to_vec() }, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let ng = self.needs(&[x]);
        self.push(value, Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.is_empty() {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let value = Tensor::scalar(xv.sum() / xv.len() as f64);
        let ng = self.needs(&[x]);
        Ok(self.push(value, Op::Mean(x), ng))
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        lv.expect_matrix("cross_entropy")?;
        let (n, c) = (lv.rows(), lv.cols());
        if c == 0 || n == 0 {
            return Err(Error::shape("cross_entropy", "empty logits"));
        }
        if targets.len() != n {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} targets for {n} rows", targets.len()),
            ));
        }
        let mut probs = vec![0.0; n * c];
        let mut total = 0.0;
        for r in 0..n {
            let t = targets[r];
            if t >= c {
                return Err(Error::InvalidArgument(format!("cross_entropy: target {t} out of range for {c} classes")));
            }
            let row = lv.row(r);
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let z: f64 = row.iter().map(|&x| (x - m).exp()).sum();
            let lse = m + z.ln();
            total += lse - row[t];
            for k in 0..c {
                probs[r * c + k] = (row[k] - lse).exp();
            }
        }
        let probs = Tensor::matrix(n, c, probs)?;
        let ng = self.needs(&[logits]);
        Ok(self.push(
            Tensor::scalar(total / n as f64),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            ng,
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).transpose()?;
        let ng = self.needs(&[x]);
        Ok(self.push(value, Op::Transpose(x), ng))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        xv.expect_matrix("slice_rows")?;
        if start + len > xv.rows() {
            return Err(Error::shape("slice_rows", format!("rows {start}..{} of {}", start + len, xv.rows())));
        }
        let c = xv.cols();
        let value = Tensor::matrix(len, c, xv.data()[start * c..(start + len) * c].to_vec())?;
        let ng = self.needs(&[x]);
        Ok(self.push(value, Op::SliceRows { x, start }, ng))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        xv.expect_matrix("slice_cols")?;
        if start + len > xv.cols() {
            return Err(Error::shape("slice_cols", format!("cols {start}..{} of {}", start + len, xv.cols())));
        }
        let value = Tensor::from_fn(xv.rows(), len, |i, j| xv.get(i, start + j));
        let ng = self.needs(&[x]);
        Ok(self.push(value, Op::SliceCols { x, start }, ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::shape("concat_rows", "no parts"))?;
        let c = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            pv.expect_matrix("concat_rows")?;
            if pv.cols() != c {
                return Err(Error::shape("concat_rows", format!("{} columns vs {c}", pv.cols())));
            }
            rows += pv.rows();
            data.extend_from_slice(pv.data());
        }
        let value = Tensor::matrix(rows, c, data)?;
        let ng = self.needs(parts);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::shape("concat_cols", "no parts"))?;
        let r = self.value(*first).rows();
        let mut total = 0;
        for &p in parts {
            let pv = self.value(p);
            pv.expect_matrix("concat_cols")?;
            if pv.rows() != r {
                return Err(Error::shape("concat_cols", format!("{} rows vs {r}", pv.rows())));
            }
            total += pv.cols();
        }
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = Tensor::matrix(r, total, data)?;
        let ng = self.needs(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Fused GRN combination of stack columns (see [`crate::grn::combine`]).
    pub fn grn_combine(&mut self, cols: &[Var], variant: GrnVariant, b: Var, w: Option<Var>) -> Result<Var> {
        let fwd = {
            let cv: Vec<&Tensor> = cols.iter().map(|&c| self.value(c)).collect();
            combine_forward(&cv, variant, self.value(b), w.map(|w| self.value(w)))?
        };
        let mut deps = cols.to_vec();
        deps.push(b);
        deps.extend(w);
        let ng = self.needs(&deps);
        Ok(self.push(
            fwd.out,
            Op::Grn {
                cols: cols.to_vec(),
                variant,
                b,
                w,
                gate_pre: fwd.gate_pre,
            },
            ng,
        ))
    }

    /// Causal multi-head scaled dot-product attention on already projected
    /// `q, k, v` of shape `(batch·seq)×d`. Rows are grouped into sequences of
    /// length `seq`; head `h` uses columns `h·d/heads .. (h+1)·d/heads`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, seq: usize) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        qv.expect_matrix("attention")?;
        qv.expect_same_shape(kv, "attention")?;
        qv.expect_same_shape(vv, "attention")?;
        let (rows, d) = (qv.rows(), qv.cols());
        if heads == 0 || d % heads != 0 {
            return Err(Error::shape("attention", format!("width {d} not divisible by {heads} heads")));
        }
        if seq == 0 || rows % seq != 0 {
            return Err(Error::shape("attention", format!("{rows} rows not a multiple of seq {seq}")));
        }
        let (out, probs) = attention_forward(qv.data(), kv.data(), vv.data(), rows / seq, seq, d, heads);
        let value = Tensor::matrix(rows, d, out)?;
        let ng = self.needs(&[q, k, v]);
        Ok(self.push(value, Op::Attention { q, k, v, heads, seq, probs }, ng))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 || lv.rank() > 1 && lv.shape().iter().any(|&e| e != 1) {
            return Err(Error::shape("backward", format!("loss must be scalar, got {:?}", lv.shape())));
        }
        self.backward_seeded(loss, Tensor::new(lv.shape().to_vec(), vec![1.0])?)
    }

    /// Reverse sweep seeded with an arbitrary cotangent for `out`.
    pub fn backward_seeded(&self, out: Var, seed: Tensor) -> Result<Gradients> {
        self.value(out).expect_same_shape(&seed, "backward_seeded")?;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            if self.nodes[i].needs_grad {
                self.propagate(i, &gy, &mut grads)?;
            }
            grads[i] = Some(gy);
        }
        Ok(Gradients {
            grads,
            params: self.param_vars.clone(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
        if !self.nodes[v.0].needs_grad {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g)?,
            slot => *slot = Some(g),
        }
        Ok(())
    }

    fn propagate(&self, i: usize, gy: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.nodes[a.0].needs_grad {
                    let g = matmul_nt(gy, self.value(*b))?;
                    self.accumulate(grads, *a, g)?;
                }
                if self.nodes[b.0].needs_grad {
                    let g = matmul_tn(self.value(*a), gy)?;
                    self.accumulate(grads, *b, g)?;
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gy.clone())?;
                self.accumulate(grads, *b, gy.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gy.clone())?;
                self.accumulate(grads, *b, gy.scale(-1.0))?;
            }
            Op::Mul(a, b) => {
                let ga = gy.hadamard(self.value(*b))?;
                let gb = gy.hadamard(self.value(*a))?;
                self.accumulate(grads, *a, ga)?;
                self.accumulate(grads, *b, gb)?;
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, gy.scale(*c))?,
            Op::AddRow(x, r) => {
                self.accumulate(grads, *x, gy.clone())?;
                let rv = self.value(*r);
                let gr = column_sums(gy);
                self.accumulate(grads, *r, Tensor::new(rv.shape().to_vec(), gr)?)?;
            }
            Op::MulRow(x, r) => {
                let (xv, rv) = (self.value(*x), self.value(*r));
                let c = xv.cols();
                let rd = rv.data();
                let mut gx = gy.clone();
                for (k, g) in gx.data_mut().iter_mut().enumerate() {
                    *g *= rd[k % c];
                }
                let gr = column_sums(&gy.hadamard(xv)?);
                self.accumulate(grads, *x, gx)?;
                self.accumulate(grads, *r, Tensor::new(rv.shape().to_vec(), gr)?)?;
            }
            Op::Relu(x) => {
                let g = gy.zip_map(self.value(*x), "relu backward", |g, x| if x > 0.0 { g } else { 0.0 })?;
                self.accumulate(grads, *x, g)?;
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let (n, c) = (y.rows(), y.cols());
                let mut gx = vec![0.0; n * c];
                for r in 0..n {
                    let (yr, gr) = (y.row(r), gy.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for k in 0..c {
                        gx[r * c + k] = yr[k] * (gr[k] - dot);
                    }
                }
                self.accumulate(grads, *x, Tensor::matrix(n, c, gx)?)?;
            }
            Op::CausalMask(x) => {
                let mut g = gy.clone();
                let n = g.rows();
                for i in 0..n {
                    for j in (i + 1)..n {
                        g.set(i, j, 0.0);
                    }
                }
                self.accumulate(grads, *x, g)?;
            }
            Op::LayerNormRows { x, xhat, rstd } => {
                let (n, c) = (xhat.rows(), xhat.cols());
                let mut gx = vec![0.0; n * c];
                for r in 0..n {
                    let (xr, gr) = (xhat.row(r), gy.row(r));
                    let mg = gr.iter().sum::<f64>() / c as f64;
                    let mgx = gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    for k in 0..c {
                        gx[r * c + k] = rstd[r] * (gr[k] - mg - xr[k] * mgx);
                    }
                }
                self.accumulate(grads, *x, Tensor::matrix(n, c, gx)?)?;
            }
            Op::Gather { table, ids } => {
                let tv = self.value(*table);
                let c = tv.cols();
                let mut gt = Tensor::zeros(tv.shape());
                let gd = gt.data_mut();
                for (r, &id) in ids.iter().enumerate() {
                    for k in 0..c {
                        gd[id * c + k] += gy.data()[r * c + k];
                    }
                }
                self.accumulate(grads, *table, gt)?;
            }
            Op::Sum(x) => {
                let g = gy.data()[0];
                self.accumulate(grads, *x, Tensor::full(self.value(*x).shape(), g))?;
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let g = gy.data()[0] / xv.len() as f64;
                self.accumulate(grads, *x, Tensor::full(xv.shape(), g))?;
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let n = probs.rows();
                let c = probs.cols();
                let s = gy.data()[0] / n as f64;
                let mut g = probs.scale(s);
                for (r, &t) in targets.iter().enumerate() {
                    g.data_mut()[r * c + t] -= s;
                }
                self.accumulate(grads, *logits, g)?;
            }
            Op::Transpose(x) => self.accumulate(grads, *x, gy.transpose()?)?,
            Op::SliceRows { x, start } => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut g = Tensor::zeros(xv.shape());
                g.data_mut()[start * c..start * c + gy.len()].copy_from_slice(gy.data());
                self.accumulate(grads, *x, g)?;
            }
            Op::SliceCols { x, start } => {
                let xv = self.value(*x);
                let mut g = Tensor::zeros(xv.shape());
                for r in 0..gy.rows() {
                    for k in 0..gy.cols() {
                        g.set(r, start + k, gy.get(r, k));
                    }
                }
                self.accumulate(grads, *x, g)?;
            }
            Op::ConcatRows(parts) => {
                let c = gy.cols();
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let len = pv.rows() * c;
                    let g = Tensor::new(pv.shape().to_vec(), gy.data()[offset..offset + len].to_vec())?;
                    offset += len;
                    self.accumulate(grads, p, g)?;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    let g = Tensor::from_fn(gy.rows(), pc, |r, k| gy.get(r, offset + k));
                    offset += pc;
                    self.accumulate(grads, p, g)?;
                }
            }
            Op::Grn { cols, variant, b, w, gate_pre } => {
                let back = {
                    let cv: Vec<&Tensor> = cols.iter().map(|&c| self.value(c)).collect();
                    combine_backward(
                        &cv,
                        *variant,
                        self.value(*b),
                        w.map(|w| self.value(w)),
                        gate_pre.as_deref(),
                        gy,
                    )?
                };
                for (&c, g) in cols.iter().zip(back.d_cols) {
                    self.accumulate(grads, c, g)?;
                }
                self.accumulate(grads, *b, back.d_b)?;
                if let (Some(w), Some(dw)) = (w, back.d_w) {
                    self.accumulate(grads, *w, dw)?;
                }
            }
            Op::Attention { q, k, v, heads, seq, probs } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let (rows, d) = (qv.rows(), qv.cols());
                let (dq, dk, dv) = attention_backward(
                    qv.data(),
                    kv.data(),
                    vv.data(),
                    probs,
                    gy.data(),
                    rows / seq,
                    *seq,
                    d,
                    *heads,
                );
                self.accumulate(grads, *q, Tensor::matrix(rows, d, dq)?)?;
                self.accumulate(grads, *k, Tensor::matrix(rows, d, dk)?)?;
                self.accumulate(grads, *v, Tensor::matrix(rows, d, dv)?)?;
            }
        }
        Ok(())
    }
}

fn column_sums(g: &Tensor) -> Vec<f64> {
    let c = g.cols();
    let mut out = vec![0.0; c];
    for r in 0..g.rows() {
        for (o, x) in out.iter_mut().zip(g.row(r)) {
            *o += x;
        }
    }
    out
}

fn softmax_into(row: &[f64], out: &mut [f64]) -> Result<()> {
    let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if m == f64::NEG_INFINITY {
        return Err(Error::InvalidArgument("softmax over a fully masked row".into()));
    }
    let mut z = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - m).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
    Ok(())
}

/// Probabilities are stored per `(batch, head)` block as `seq×seq`, zero
/// above the diagonal.
fn attention_forward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    batch: usize,
    seq: usize,
    d: usize,
    heads: usize,
) -> (Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; batch * seq * d];
    let mut probs = vec![0.0; batch * heads * seq * seq];
    let mut scores = vec![0.0; seq];
    for b in 0..batch {
        for h in 0..heads {
            let p_base = (b * heads + h) * seq * seq;
            for i in 0..seq {
                let qi = &q[(b * seq + i) * d + h * dh..][..dh];
                let mut m = f64::NEG_INFINITY;
                for j in 0..=i {
                    let kj = &k[(b * seq + j) * d + h * dh..][..dh];
                    let mut acc = 0.0;
                    for c in 0..dh {
                        acc += qi[c] * kj[c];
                    }
                    scores[j] = acc * scale;
                    m = m.max(scores[j]);
                }
                let mut z = 0.0;
                for s in scores.iter_mut().take(i + 1) {
                    *s = (*s - m).exp();
                    z += *s;
                }
                let prow = &mut probs[p_base + i * seq..][..seq];
                for j in 0..=i {
                    prow[j] = scores[j] / z;
                }
                let orow = &mut out[(b * seq + i) * d + h * dh..][..dh];
                for j in 0..=i {
                    let vj = &v[(b * seq + j) * d + h * dh..][..dh];
                    let p = prow[j];
                    for c in 0..dh {
                        orow[c] += p * vj[c];
                    }
                }
            }
        }
    }
    (out, probs)
}

#[allow(clippy::too_many_arguments)]
fn attention_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &[f64],
    gy: &[f64],
    batch: usize,
    seq: usize,
    d: usize,
    heads: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![0.0; q.len()];
    let mut dk = vec![0.0; k.len()];
    let mut dv = vec![0.0; v.len()];
    let mut dp = vec![0.0; seq];
    for b in 0..batch {
        for h in 0..heads {
            let p_base = (b * heads + h) * seq * seq;
            for i in 0..seq {
                let gi = &gy[(b * seq + i) * d + h * dh..][..dh];
                let prow = &probs[p_base + i * seq..][..seq];
                let mut dot = 0.0;
                for j in 0..=i {
                    let vj = &v[(b * seq + j) * d + h * dh..][..dh];
                    let mut acc = 0.0;
                    for c in 0..dh {
                        acc += gi[c] * vj[c];
                    }
                    dp[j] = acc;
                    dot += acc * prow[j];
                    let dvj = &mut dv[(b * seq + j) * d + h * dh..][..dh];
                    for c in 0..dh {
                        dvj[c] += prow[j] * gi[c];
                    }
                }
                let qi_off = (b * seq + i) * d + h * dh;
                for j in 0..=i {
                    let ds = prow[j] * (dp[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj_off = (b * seq + j) * d + h * dh;
                    for c in 0..dh {
                        dq[qi_off + c] += ds * k[kj_off + c];
                        dk[kj_off + c] += ds * q[qi_off + c];
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}

/// Jacobian of a map `R^d → R^d` at `x`, assembled from `d` reverse sweeps.
/// Row `i` is the gradient of output `i`.
pub fn jacobian<F>(f: F, x: &[f64]) -> Result<Tensor>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let d = x.len();
    let mut g = Graph::new();
    let xv = g.leaf(Tensor::matrix(1, d, x.to_vec())?);
    let y = f(&mut g, xv)?;
    let out_len = g.value(y).len();
    if out_len != d {
        return Err(Error::shape("jacobian", format!("map from {d} to {out_len} dimensions is not square")));
    }
    let shape = g.value(y).shape().to_vec();
    let mut jac = Tensor::zeros(&[d, d]);
    for i in 0..d {
        let mut seed = vec![0.0; d];
        seed[i] = 1.0;
        let grads = g.backward_seeded(y, Tensor::new(shape.clone(), seed)?)?;
        if let Some(gx) = grads.get(xv) {
            for j in 0..d {
                jac.set(i, j, gx.data()[j]);
            }
        }
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn relu_values() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        let y = g.softmax_rows(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_v() {
        let mut g = Graph::new();
        let v = 7;
        let x = g.leaf(Tensor::zeros(&[3, v]));
        let l = g.cross_entropy(x, &[0, 3, 6]).unwrap();
        assert!((g.value(l).data()[0] - (v as f64).ln()).abs() < 1e-15);
        assert!(g.cross_entropy(x, &[0, 3, 7]).is_err());
        let e = g.leaf(Tensor::zeros(&[2, 0]));
        assert!(g.cross_entropy(e, &[0, 0]).is_err());
        assert!(g.softmax_rows(e).is_err());
    }

    #[test]
    fn sum_gives_ones() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::randn(&[3, 4], 1.0, &mut Rng::new(1)));
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &Tensor::ones(&[3, 4]));
    }

    #[test]
    fn quadratic_form_gradient() {
        let mut rng = Rng::new(2);
        let wt = Tensor::randn(&[4, 3], 1.0, &mut rng);
        let xt = Tensor::randn(&[3, 1], 1.0, &mut rng);
        let mut g = Graph::new();
        let w = g.leaf(wt.clone());
        let x = g.constant(xt.clone());
        let wx = g.matmul(w, x).unwrap();
        let sq = g.mul(wx, wx).unwrap();
        let s = g.sum(sq);
        let loss = g.scale(s, 0.5);
        let grads = g.backward(loss).unwrap();
        let want = matmul_nt(&matmul(&wt, &xt).unwrap(), &xt).unwrap();
        assert!(grads.get(w).unwrap().max_abs_diff(&want).unwrap() < 1e-14);
        assert!(grads.get(x).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2, 2]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn repeated_backward_is_bit_identical() {
        let run = || {
            let mut rng = Rng::new(3);
            let mut g = Graph::new();
            let a = g.leaf(Tensor::randn(&[5, 4], 1.0, &mut rng));
            let b = g.leaf(Tensor::randn(&[4, 6], 1.0, &mut rng));
            let c = g.matmul(a, b).unwrap();
            let n = g.layernorm_rows(c, 1e-6).unwrap();
            let l = g.cross_entropy(n, &[0, 1, 2, 3, 4]).unwrap();
            let grads = g.backward(l).unwrap();
            grads.get(a).unwrap().clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn jacobian_of_linear_map() {
        let m = Tensor::randn(&[4, 4], 1.0, &mut Rng::new(4));
        let mt = m.transpose().unwrap();
        let j = jacobian(
            |g, x| {
                let w = g.constant(mt.clone());
                g.matmul(x, w)
            },
            &[0.1, -0.2, 0.3, 0.4],
        )
        .unwrap();
        assert!(j.max_abs_diff(&m).unwrap() < 1e-10);
        let id = jacobian(|_, x| Ok(x), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(id, Tensor::eye(3));
        let bad = jacobian(|g, x| Ok(g.sum(x)), &[1.0, 2.0]);
        assert!(bad.is_err());
    }

    #[test]
    fn attention_single_position_copies_value() {
        let mut rng = Rng::new(5);
        let mut g = Graph::new();
        let q = g.leaf(Tensor::randn(&[1, 4], 1.0, &mut rng));
        let k = g.leaf(Tensor::randn(&[1, 4], 1.0, &mut rng));
        let v = g.leaf(Tensor::randn(&[1, 4], 1.0, &mut rng));
        let a = g.attention(q, k, v, 2, 1).unwrap();
        assert_eq!(g.value(a), g.value(v));
    }
}
