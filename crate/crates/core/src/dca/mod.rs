//! Decoder-only language models: a pre-norm transformer baseline and the
//! DCA variant whose blocks read three GRN-v3 combinations of the stack.
//!
//! Baseline block, recursion form:
//!
//! ```text
//! h ← h + MHA(LN1(h), LN1(h), LN1(h))
//! h ← h + FFN(LN2(h))
//! ```
//!
//! DCA block, with `s_q, s_k, s_v` GRN-v3 combinations of the stack:
//!
//! ```text
//! a   = MHA(LN1(s_q), LN1(s_k), LN1(s_v))
//! out = a + FFN(LN2(s_v + a))          pushed onto the stack
//! ```
//!
//! At `b = 1, w = 0` every combination is the stack sum, so a DCA model
//! computes the baseline function up to summation order. Both models end
//! with `LN_f`, a `d×V` projection and a bias. The DCA model first reduces
//! the stack with one more GRN-v3 combination.

pub mod attention;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::grn::{Arch, GrnParams, GrnVariant, LayerStack, StackMode};
use crate::rng::Rng;
use crate::tensor::Tensor;

use attention::{multi_head, AttentionIds};

pub const LAYERNORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmConfig {
    pub arch: Arch,
    pub vocab: usize,
    pub d: usize,
    pub heads: usize,
    pub blocks: usize,
    /// Longest sequence the positional table covers.
    pub max_seq: usize,
    /// `Some(k)` keeps the input, a running sum and the last `k` outputs.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
    /// One LN1 shared by the q/k/v inputs; `false` gives each its own.
    #[serde(default = "default_true")]
    pub shared_qkv_norm: bool,
}

fn default_init_std() -> f64 {
    0.02
}

fn default_true() -> bool {
    true
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            arch: Arch::Dca,
            vocab: 256,
            d: 64,
            heads: 4,
            blocks: 4,
            max_seq: 64,
            k: None,
            init_std: default_init_std(),
            shared_qkv_norm: true,
        }
    }
}

impl LmConfig {
    pub fn stack_mode(&self) -> StackMode {
        match self.k {
            Some(k) => StackMode::FirstLastK(k),
            None => StackMode::Full,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.arch.is_language_model() {
            return Err(Error::Config(format!("{} is not a language-model architecture", self.arch)));
        }
        if self.vocab == 0 || self.d == 0 || self.max_seq == 0 {
            return Err(Error::Config("vocab, d and max_seq must be positive".into()));
        }
        if self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::Config(format!("d = {} is not divisible by heads = {}", self.d, self.heads)));
        }
        if !(self.init_std.is_finite() && self.init_std >= 0.0) {
            return Err(Error::Config(format!("init_std {} must be finite and ≥ 0", self.init_std)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Grn {
    b: ParamId,
    w: ParamId,
}

#[derive(Debug, Clone)]
struct Block {
    ln1: [Norm; 3],
    attn: AttentionIds,
    ln2: Norm,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    /// q, k, v combinations; DCA only.
    grns: Option<[Grn; 3]>,
}

pub const GRN_ROLES: [&str; 3] = ["grn_q", "grn_k", "grn_v"];

#[derive(Debug, Clone)]
pub struct LmModel {
    cfg: LmConfig,
    pub store: ParamStore,
    tok: ParamId,
    pos: ParamId,
    blocks: Vec<Block>,
    out_grn: Option<Grn>,
    ln_f: Norm,
    proj: ParamId,
    proj_bias: ParamId,
}

/// A batch of equal-length token sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub seq: usize,
    /// Row-major `batch×seq` token ids.
    pub tokens: Vec<usize>,
}

impl Batch {
    pub fn new(seqs: &[Vec<usize>]) -> Result<Self> {
        let seq = seqs.first().map_or(0, |s| s.len());
        if seq == 0 || seqs.iter().any(|s| s.len() != seq) {
            return Err(Error::InvalidArgument("batch needs nonempty sequences of equal length".into()));
        }
        Ok(Batch {
            seq,
            tokens: seqs.concat(),
        })
    }

    pub fn sequences(&self) -> usize {
        self.tokens.len() / self.seq
    }
}

fn add_norm(store: &mut ParamStore, name: &str, d: usize) -> Result<Norm> {
    Ok(Norm {
        gain: store.add(format!("{name}.gain"), Tensor::ones(&[d]), false)?,
        bias: store.add(format!("{name}.bias"), Tensor::zeros(&[d]), false)?,
    })
}

fn add_grn(store: &mut ParamStore, name: &str, d: usize, width: usize) -> Result<Grn> {
    let p = GrnParams::new(GrnVariant::V3, d, width);
    Ok(Grn {
        b: store.add(format!("{name}.b"), p.b, false)?,
        w: store.add(format!("{name}.w"), p.w.expect("v3 has gate weights"), false)?,
    })
}

impl LmModel {
    /// Random weights from `rng`. Weight matrices are `N(0, init_std²)`,
    /// norms start at gain 1 / bias 0, biases at 0, GRNs at `b = 1, w = 0`.
    /// The draw order does not depend on the architecture, so a baseline
    /// and a DCA model built from equal seeds share every common weight.
    pub fn new(cfg: LmConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let (d, v, std) = (cfg.d, cfg.vocab, cfg.init_std);
        let mut store = ParamStore::new();
        let tok = store.add("embed.tok", Tensor::randn(&[v, d], std, rng), true)?;
        let pos = store.add("embed.pos", Tensor::randn(&[cfg.max_seq, d], std, rng), true)?;
        let mut blocks = Vec::with_capacity(cfg.blocks);
        for i in 0..cfg.blocks {
            let p = format!("block{}", i + 1);
            let ln1a = add_norm(&mut store, &format!("{p}.ln1"), d)?;
            let ln1 = if cfg.shared_qkv_norm {
                [ln1a; 3]
            } else {
                [
                    ln1a,
                    add_norm(&mut store, &format!("{p}.ln1k"), d)?,
                    add_norm(&mut store, &format!("{p}.ln1v"), d)?,
                ]
            };
            let mut mat = |store: &mut ParamStore, name: &str, r: usize, c: usize| {
                store.add(format!("{p}.{name}"), Tensor::randn(&[r, c], std, rng), true)
            };
            let attn = AttentionIds {
                wq: mat(&mut store, "attn.wq", d, d)?,
                wk: mat(&mut store, "attn.wk", d, d)?,
                wv: mat(&mut store, "attn.wv", d, d)?,
                wo: mat(&mut store, "attn.wo", d, d)?,
            };
            let w1 = mat(&mut store, "ffn.w1", d, 4 * d)?;
            let w2 = mat(&mut store, "ffn.w2", 4 * d, d)?;
            let b1 = store.add(format!("{p}.ffn.b1"), Tensor::zeros(&[4 * d]), false)?;
            let b2 = store.add(format!("{p}.ffn.b2"), Tensor::zeros(&[d]), false)?;
            let ln2 = add_norm(&mut store, &format!("{p}.ln2"), d)?;
            let grns = if cfg.arch == Arch::Dca {
                let width = cfg.stack_mode().width_after(i + 1);
                let mut g = Vec::with_capacity(3);
                for role in GRN_ROLES {
                    g.push(add_grn(&mut store, &format!("{p}.{role}"), d, width)?);
                }
                Some([g[0], g[1], g[2]])
            } else {
                None
            };
            blocks.push(Block {
                ln1,
                attn,
                ln2,
                w1,
                b1,
                w2,
                b2,
                grns,
            });
        }
        let out_grn = if cfg.arch == Arch::Dca {
            Some(add_grn(&mut store, "out.grn", d, cfg.stack_mode().width_after(cfg.blocks + 1))?)
        } else {
            None
        };
        let ln_f = add_norm(&mut store, "final.ln", d)?;
        let proj = store.add("out.proj", Tensor::randn(&[d, v], std, rng), true)?;
        let proj_bias = store.add("out.bias", Tensor::zeros(&[v]), false)?;
        Ok(LmModel {
            cfg,
            store,
            tok,
            pos,
            blocks,
            out_grn,
            ln_f,
            proj,
            proj_bias,
        })
    }

    pub fn config(&self) -> &LmConfig {
        &self.cfg
    }

    fn norm(&self, g: &mut Graph, n: Norm, x: Var) -> Result<Var> {
        let h = g.layernorm_rows(x, LAYERNORM_EPS)?;
        let gain = g.param(&self.store, n.gain);
        let bias = g.param(&self.store, n.bias);
        let h = g.mul_row(h, gain)?;
        g.add_row(h, bias)
    }

    fn ffn(&self, g: &mut Graph, blk: &Block, x: Var) -> Result<Var> {
        let w1 = g.param(&self.store, blk.w1);
        let b1 = g.param(&self.store, blk.b1);
        let w2 = g.param(&self.store, blk.w2);
        let b2 = g.param(&self.store, blk.b2);
        let h = g.matmul(x, w1)?;
        let h = g.add_row(h, b1)?;
        let h = g.relu(h);
        let h = g.matmul(h, w2)?;
        g.add_row(h, b2)
    }

    fn grn(&self, g: &mut Graph, p: Grn, cols: &[Var]) -> Result<Var> {
        let b = g.param(&self.store, p.b);
        let w = g.param(&self.store, p.w);
        g.grn_combine(cols, GrnVariant::V3, b, Some(w))
    }

    fn embed(&self, g: &mut Graph, batch: &Batch) -> Result<Var> {
        if batch.seq > self.cfg.max_seq {
            return Err(Error::InvalidArgument(format!(
                "sequence length {} exceeds max_seq {}",
                batch.seq, self.cfg.max_seq
            )));
        }
        if let Some(&t) = batch.tokens.iter().find(|&&t| t >= self.cfg.vocab) {
            return Err(Error::InvalidArgument(format!("token {t} out of range for vocab {}", self.cfg.vocab)));
        }
        let tok = g.param(&self.store, self.tok);
        let pos = g.param(&self.store, self.pos);
        let te = g.gather(tok, &batch.tokens)?;
        let positions: Vec<usize> = (0..batch.tokens.len()).map(|i| i % batch.seq).collect();
        let pe = g.gather(pos, &positions)?;
        g.add(te, pe)
    }

    /// Final hidden states before the output norm.
    fn trunk(&self, g: &mut Graph, batch: &Batch) -> Result<Var> {
        let x = self.embed(g, batch)?;
        let (heads, seq) = (self.cfg.heads, batch.seq);
        if self.cfg.arch == Arch::Transformer {
            let mut h = x;
            for blk in &self.blocks {
                let n = self.norm(g, blk.ln1[0], h)?;
                let a = multi_head(g, &self.store, blk.attn, n, n, n, heads, seq)?;
                h = g.add(h, a)?;
                let n = self.norm(g, blk.ln2, h)?;
                let f = self.ffn(g, blk, n)?;
                h = g.add(h, f)?;
            }
            return Ok(h);
        }
        let mut stack = LayerStack::new(self.cfg.stack_mode());
        stack.push_with(x, |a, _| Ok(a))?;
        for blk in &self.blocks {
            let cols: Vec<Var> = stack.columns().into_iter().copied().collect();
            let grns = blk.grns.expect("DCA block has combinations");
            let sq = self.grn(g, grns[0], &cols)?;
            let sk = self.grn(g, grns[1], &cols)?;
            let sv = self.grn(g, grns[2], &cols)?;
            let nq = self.norm(g, blk.ln1[0], sq)?;
            let nk = self.norm(g, blk.ln1[1], sk)?;
            let nv = self.norm(g, blk.ln1[2], sv)?;
            let a = multi_head(g, &self.store, blk.attn, nq, nk, nv, heads, seq)?;
            let skip = g.add(sv, a)?;
            let n = self.norm(g, blk.ln2, skip)?;
            let f = self.ffn(g, blk, n)?;
            let out = g.add(a, f)?;
            stack.push_with(out, |s, e| g.add(s, e))?;
        }
        let cols: Vec<Var> = stack.columns().into_iter().copied().collect();
        self.grn(g, self.out_grn.expect("DCA model has an output combination"), &cols)
    }

    /// Logits of shape `(batch·seq)×V`.
    pub fn logits(&self, g: &mut Graph, batch: &Batch) -> Result<Var> {
        let h = self.trunk(g, batch)?;
        let n = self.norm(g, self.ln_f, h)?;
        let proj = g.param(&self.store, self.proj);
        let bias = g.param(&self.store, self.proj_bias);
        let z = g.matmul(n, proj)?;
        g.add_row(z, bias)
    }

    /// Mean next-token cross-entropy; `targets` aligns with `batch.tokens`.
    pub fn loss(&self, g: &mut Graph, batch: &Batch, targets: &[usize]) -> Result<Var> {
        let z = self.logits(g, batch)?;
        g.cross_entropy(z, targets)
    }

    pub fn eval_logits(&self, batch: &Batch) -> Result<Tensor> {
        let mut g = Graph::new();
        let z = self.logits(&mut g, batch)?;
        Ok(g.value(z).clone())
    }

    pub fn eval_loss(&self, batch: &Batch, targets: &[usize]) -> Result<f64> {
        let mut g = Graph::new();
        let l = self.loss(&mut g, batch, targets)?;
        Ok(g.value(l).data()[0])
    }

    /// GRN weight tensors as `(block, role, b)`; block `None` is the output
    /// combination.
    pub fn grn_weights(&self) -> Vec<(Option<usize>, &'static str, &Tensor)> {
        let mut out = Vec::new();
        for (i, blk) in self.blocks.iter().enumerate() {
            if let Some(grns) = blk.grns {
                for (role, p) in GRN_ROLES.iter().zip(grns) {
                    out.push((Some(i + 1), *role, self.store.value(p.b)));
                }
            }
        }
        if let Some(p) = self.out_grn {
            out.push((None, "out", self.store.value(p.b)));
        }
        out
    }
}

/// Wraps a trained baseline in DCA blocks with fresh `b = 1, w = 0`
/// combinations, copying every shared weight by name.
pub fn retrofit(baseline: &LmModel, k: Option<usize>) -> Result<LmModel> {
    if baseline.cfg.arch != Arch::Transformer {
        return Err(Error::InvalidArgument(format!(
            "retrofit expects a transformer, got {}",
            baseline.cfg.arch
        )));
    }
    let cfg = LmConfig {
        arch: Arch::Dca,
        k,
        ..baseline.cfg.clone()
    };
    let mut model = LmModel::new(cfg, &mut Rng::new(0))?;
    copy_shared(&baseline.store, &mut model.store)?;
    Ok(model)
}

/// Copies every parameter of `src` into the same-named slot of `dst`.
/// Every source name must exist in `dst` with the same shape.
pub fn copy_shared(src: &ParamStore, dst: &mut ParamStore) -> Result<()> {
    for (_, name, value) in src.iter() {
        let id = dst
            .id(name)
            .ok_or_else(|| Error::InvalidArgument(format!("parameter {name} missing from target model")))?;
        dst.set(id, value.clone()).map_err(|_| {
            Error::InvalidArgument(format!(
                "parameter {name}: shape {:?} does not fit {:?}",
                value.shape(),
                dst.value(id).shape()
            ))
        })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(arch: Arch) -> LmConfig {
        LmConfig {
            arch,
            vocab: 11,
            d: 8,
            heads: 2,
            blocks: 3,
            max_seq: 6,
            k: None,
            init_std: 0.3,
            shared_qkv_norm: true,
        }
    }

    fn batch(seed: u64) -> Batch {
        let mut rng = Rng::new(seed);
        let seqs: Vec<Vec<usize>> = (0..2).map(|_| (0..5).map(|_| rng.below(11) as usize).collect()).collect();
        Batch::new(&seqs).unwrap()
    }

    #[test]
    fn dca_at_init_matches_transformer() {
        let base = LmModel::new(cfg(Arch::Transformer), &mut Rng::new(1)).unwrap();
        let dca = LmModel::new(cfg(Arch::Dca), &mut Rng::new(1)).unwrap();
        let b = batch(2);
        let diff = base.eval_logits(&b).unwrap().max_abs_diff(&dca.eval_logits(&b).unwrap()).unwrap();
        assert!(diff <= 1e-10, "{diff}");
    }

    #[test]
    fn zero_projection_gives_log_vocab() {
        let mut m = LmModel::new(cfg(Arch::Dca), &mut Rng::new(3)).unwrap();
        let id = m.store.id("out.proj").unwrap();
        m.store.set(id, Tensor::zeros(&[8, 11])).unwrap();
        let b = batch(4);
        let loss = m.eval_loss(&b, &b.tokens).unwrap();
        assert!((loss - 11f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn out_of_range_token_rejected() {
        let m = LmModel::new(cfg(Arch::Transformer), &mut Rng::new(5)).unwrap();
        let b = Batch::new(&[vec![0, 11]]).unwrap();
        assert!(m.eval_logits(&b).is_err());
    }

    #[test]
    fn heads_must_divide_width() {
        let mut c = cfg(Arch::Dca);
        c.heads = 3;
        assert!(LmModel::new(c, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn retrofit_preserves_function() {
        let base = LmModel::new(cfg(Arch::Transformer), &mut Rng::new(6)).unwrap();
        let wrapped = retrofit(&base, None).unwrap();
        let b = batch(7);
        let diff = base.eval_logits(&b).unwrap().max_abs_diff(&wrapped.eval_logits(&b).unwrap()).unwrap();
        assert!(diff <= 1e-10);
        assert!(retrofit(&wrapped, None).is_err());
    }
}
