//! Deep low-rank linear and residual-MLP models.
//!
//! Layer `t` maps a batch `Z` (`n×d`, one example per row) to
//! `σ(Z·D_t)·U_t` with `D_t: d×r_t` and `U_t: r_t×d`, where `σ` is the
//! identity or ReLU. How layer inputs are formed depends on the
//! architecture:
//!
//! * `Baseline`: plain composition, no skip connections;
//! * `ResNet`: input is `f_1 + … + f_{t-1} + x`, summed in that order;
//! * `V1`/`V2`/`V3`: input is a GRN combination of the stack, and the
//!   output is one more combination after the last layer.

use serde::{Deserialize, Serialize};

use crate::autodiff::{jacobian, Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::{Arch, GrnParams, GrnVariant, LayerStack, StackMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModelSpec {
    pub arch: Arch,
    pub d: usize,
    /// One rank per layer; the layer count is `ranks.len()`.
    pub ranks: Vec<usize>,
    pub activation: Activation,
    /// Standard deviation of the Gaussian factor initialisation.
    pub init_std: f64,
    pub stack_mode: StackMode,
}

impl LinearModelSpec {
    pub fn new(arch: Arch, d: usize, ranks: Vec<usize>) -> Self {
        LinearModelSpec {
            arch,
            d,
            ranks,
            activation: Activation::Linear,
            init_std: 0.1,
            stack_mode: StackMode::Full,
        }
    }

    pub fn layers(&self) -> usize {
        self.ranks.len()
    }

    pub fn collective_rank(&self) -> usize {
        self.ranks.iter().sum()
    }
}

#[derive(Debug, Clone, Copy)]
struct GrnIds {
    b: ParamId,
    w: Option<ParamId>,
}

#[derive(Debug, Clone)]
pub struct ResidualNet {
    spec: LinearModelSpec,
    pub store: ParamStore,
    layers: Vec<(ParamId, ParamId)>,
    /// `T + 1` entries for GRN architectures, the last being the output
    /// combination; empty otherwise.
    grns: Vec<GrnIds>,
}

/// Builds a model with Gaussian factors and GRN weights at `b = 1, w = 0`.
pub fn build_linear_model(spec: LinearModelSpec, rng: &mut Rng) -> Result<ResidualNet> {
    if spec.arch.is_language_model() {
        return Err(Error::InvalidArgument(format!("{} is not a linear/MLP architecture", spec.arch)));
    }
    if spec.d == 0 {
        return Err(Error::InvalidArgument("model width d must be positive".into()));
    }
    if let Some(t) = spec.ranks.iter().position(|&r| r == 0) {
        return Err(Error::InvalidArgument(format!("layer {} has rank 0; every rank must be ≥ 1", t + 1)));
    }
    if !(spec.init_std.is_finite() && spec.init_std >= 0.0) {
        return Err(Error::InvalidArgument(format!("init_std {} must be finite and ≥ 0", spec.init_std)));
    }
    let d = spec.d;
    let mut store = ParamStore::new();
    let mut layers = Vec::with_capacity(spec.layers());
    for (t, &r) in spec.ranks.iter().enumerate() {
        let down = store.add(format!("layer{}.down", t + 1), Tensor::randn(&[d, r], spec.init_std, rng), true)?;
        let up = store.add(format!("layer{}.up", t + 1), Tensor::randn(&[r, d], spec.init_std, rng), true)?;
        layers.push((down, up));
    }
    let mut grns = Vec::new();
    if let Some(variant) = spec.arch.grn_variant() {
        for t in 1..=spec.layers() + 1 {
            let width = spec.stack_mode.width_after(t);
            let prefix = if t <= spec.layers() {
                format!("layer{t}.grn")
            } else {
                "out.grn".to_string()
            };
            let p = GrnParams::new(variant, d, width);
            let b = store.add(format!("{prefix}.b"), p.b, false)?;
            let w = match p.w {
                Some(w) => Some(store.add(format!("{prefix}.w"), w, false)?),
                None => None,
            };
            grns.push(GrnIds { b, w });
        }
    }
    Ok(ResidualNet {
        spec,
        store,
        layers,
        grns,
    })
}

impl ResidualNet {
    pub fn spec(&self) -> &LinearModelSpec {
        &self.spec
    }

    /// Scalars in the layer factors only.
    pub fn layer_param_count(&self) -> usize {
        self.store.scalar_count_where(|n| n.ends_with(".down") || n.ends_with(".up"))
    }

    /// Scalars in GRN weights only.
    pub fn grn_param_count(&self) -> usize {
        self.store.scalar_count_where(|n| n.contains(".grn."))
    }

    fn layer(&self, g: &mut Graph, t: usize, h: Var) -> Result<Var> {
        let (down, up) = self.layers[t];
        let dv = g.param(&self.store, down);
        let uv = g.param(&self.store, up);
        let mut a = g.matmul(h, dv)?;
        if self.spec.activation == Activation::Relu {
            a = g.relu(a);
        }
        g.matmul(a, uv)
    }

    fn grn(&self, g: &mut Graph, idx: usize, variant: GrnVariant, cols: &[Var]) -> Result<Var> {
        let ids = self.grns[idx];
        let b = g.param(&self.store, ids.b);
        let w = ids.w.map(|w| g.param(&self.store, w));
        g.grn_combine(cols, variant, b, w)
    }

    /// Forward pass for a batch `x` of shape `n×d`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let d = g.value(x).cols();
        if d != self.spec.d {
            return Err(Error::shape("ResidualNet::forward", format!("input width {d}, model width {}", self.spec.d)));
        }
        match self.spec.arch {
            Arch::Baseline => {
                let mut h = x;
                for t in 0..self.layers.len() {
                    h = self.layer(g, t, h)?;
                }
                Ok(h)
            }
            Arch::ResNet => {
                let mut prefix: Option<Var> = None;
                for t in 0..self.layers.len() {
                    let input = match prefix {
                        Some(p) => g.add(p, x)?,
                        None => x,
                    };
                    let f = self.layer(g, t, input)?;
                    prefix = Some(match prefix {
                        Some(p) => g.add(p, f)?,
                        None => f,
                    });
                }
                match prefix {
                    Some(p) => g.add(p, x),
                    None => Ok(x),
                }
            }
            arch => {
                let variant = arch.grn_variant().expect("GRN architecture");
                let mut stack = LayerStack::new(self.spec.stack_mode);
                stack.push_with(x, |a, _| Ok(a))?;
                for t in 0..self.layers.len() {
                    let cols: Vec<Var> = stack.columns().into_iter().copied().collect();
                    let input = self.grn(g, t, variant, &cols)?;
                    let f = self.layer(g, t, input)?;
                    stack.push_with(f, |a, b| g.add(a, b))?;
                }
                let cols: Vec<Var> = stack.columns().into_iter().copied().collect();
                self.grn(g, self.layers.len(), variant, &cols)
            }
        }
    }

    /// Evaluates the model on a batch without recording gradients.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = self.forward(&mut g, xv)?;
        Ok(g.value(y).clone())
    }

    /// Jacobian of a single example; row `i` is `∂ out_i / ∂ x`. For a
    /// linear model this is the end-to-end matrix acting on column vectors.
    pub fn jacobian_at(&self, x: &[f64]) -> Result<Tensor> {
        jacobian(|g, xv| self.forward(g, xv), x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{numeric_rank, DEFAULT_RANK_TOL};

    fn model(arch: Arch, d: usize, ranks: Vec<usize>, seed: u64) -> ResidualNet {
        let mut spec = LinearModelSpec::new(arch, d, ranks);
        spec.init_std = 0.3;
        build_linear_model(spec, &mut Rng::new(seed)).unwrap()
    }

    #[test]
    fn figure_one_parameter_counts() {
        let r = model(Arch::ResNet, 100, vec![3; 10], 1);
        assert_eq!(r.layer_param_count(), 2 * 100 * 30);
        assert_eq!(r.grn_param_count(), 0);
        let v1 = model(Arch::V1, 100, vec![3; 10], 1);
        assert_eq!(v1.layer_param_count(), 6000);
        // one scalar per stack column for layers 1..=10 plus the output combine
        assert_eq!(v1.grn_param_count(), (1..=11).sum::<usize>());
        assert_eq!(v1.grn_param_count(), 66);
    }

    #[test]
    fn every_variant_equals_resnet_at_init() {
        let x = Tensor::randn(&[7, 12], 1.0, &mut Rng::new(2));
        let reference = model(Arch::ResNet, 12, vec![2, 3, 1, 2], 3).predict(&x).unwrap();
        for arch in [Arch::V1, Arch::V2, Arch::V3] {
            let out = model(arch, 12, vec![2, 3, 1, 2], 3).predict(&x).unwrap();
            assert_eq!(out, reference, "{arch}");
        }
    }

    #[test]
    fn truncated_stack_equals_full_at_init() {
        let x = Tensor::randn(&[3, 6], 1.0, &mut Rng::new(4));
        let reference = model(Arch::ResNet, 6, vec![1; 6], 5).predict(&x).unwrap();
        for k in 0..8 {
            let mut spec = LinearModelSpec::new(Arch::V3, 6, vec![1; 6]);
            spec.init_std = 0.3;
            spec.stack_mode = StackMode::FirstLastK(k);
            let m = build_linear_model(spec, &mut Rng::new(5)).unwrap();
            assert_eq!(m.predict(&x).unwrap(), reference, "k = {k}");
        }
    }

    #[test]
    fn zero_depth_is_passthrough() {
        let x = Tensor::randn(&[2, 5], 1.0, &mut Rng::new(6));
        for arch in [Arch::Baseline, Arch::ResNet, Arch::V1, Arch::V2, Arch::V3] {
            assert_eq!(model(arch, 5, vec![], 7).predict(&x).unwrap(), x);
        }
    }

    #[test]
    fn residual_rank_bounded_by_collective_rank() {
        for seed in 0..5 {
            let m = model(Arch::ResNet, 10, vec![2, 2], seed);
            let x = Rng::new(100 + seed).normals(10);
            let j = m.jacobian_at(&x).unwrap();
            let delta = j.sub(&Tensor::eye(10)).unwrap();
            assert!(numeric_rank(&delta, DEFAULT_RANK_TOL).unwrap() <= 4);
        }
    }

    #[test]
    fn baseline_rank_capped_by_smallest_layer() {
        let m = model(Arch::Baseline, 10, vec![4, 2, 5], 8);
        let j = m.jacobian_at(&Rng::new(9).normals(10)).unwrap();
        assert_eq!(numeric_rank(&j, DEFAULT_RANK_TOL).unwrap(), 2);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut rng = Rng::new(0);
        assert!(build_linear_model(LinearModelSpec::new(Arch::V1, 4, vec![1, 0]), &mut rng).is_err());
        assert!(build_linear_model(LinearModelSpec::new(Arch::Dca, 4, vec![1]), &mut rng).is_err());
    }
}
