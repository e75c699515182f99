//! Generalized residual combinations of the layer-output stack.
//!
//! A stack `G = [x, f_1, …, f_{t-1}]` is reduced to the next layer input by
//! one of three learned rules:
//!
//! * `V1`: `G·b` with one scalar per column;
//! * `V2`: `(G ⊙ B)·1` with one weight per feature and column;
//! * `V3`: `(G ⊙ (B + 1·relu(wᵀG)))·1`, an input-dependent gate on top of V2.
//!
//! With `b = 1` and `w = 0` all three reduce to the plain residual sum.

pub mod combine;
mod model;
mod stack;

pub use model::{build_linear_model, Activation, LinearModelSpec, ResidualNet};
pub use stack::{LayerStack, StackMode};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GrnVariant {
    V1,
    V2,
    V3,
}

/// Every architecture the crate can build. Linear and MLP models use the
/// first five; language models use the last two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Baseline,
    ResNet,
    V1,
    V2,
    V3,
    Transformer,
    Dca,
}

impl Arch {
    pub const ALL: [Arch; 7] = [
        Arch::Baseline,
        Arch::ResNet,
        Arch::V1,
        Arch::V2,
        Arch::V3,
        Arch::Transformer,
        Arch::Dca,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Baseline => "baseline",
            Arch::ResNet => "resnet",
            Arch::V1 => "v1",
            Arch::V2 => "v2",
            Arch::V3 => "v3",
            Arch::Transformer => "transformer",
            Arch::Dca => "dca",
        }
    }

    pub fn grn_variant(self) -> Option<GrnVariant> {
        match self {
            Arch::V1 => Some(GrnVariant::V1),
            Arch::V2 => Some(GrnVariant::V2),
            Arch::V3 | Arch::Dca => Some(GrnVariant::V3),
            _ => None,
        }
    }

    pub fn is_language_model(self) -> bool {
        matches!(self, Arch::Transformer | Arch::Dca)
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arch::ALL
            .iter()
            .copied()
            .find(|a| a.name() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                let names: Vec<&str> = Arch::ALL.iter().map(|a| a.name()).collect();
                Error::Config(format!("unknown arch {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Weights of one combination over a stack of `width` columns of size `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrnParams {
    pub variant: GrnVariant,
    /// `[width]` for V1, `[d, width]` otherwise.
    pub b: Tensor,
    /// `[d]`, V3 only.
    pub w: Option<Tensor>,
}

impl GrnParams {
    /// All-ones `b`, all-zeros `w`.
    pub fn new(variant: GrnVariant, d: usize, width: usize) -> Self {
        let b = match variant {
            GrnVariant::V1 => Tensor::ones(&[width]),
            GrnVariant::V2 | GrnVariant::V3 => Tensor::ones(&[d, width]),
        };
        let w = (variant == GrnVariant::V3).then(|| Tensor::zeros(&[d]));
        GrnParams { variant, b, w }
    }

    pub fn width(&self) -> usize {
        match self.variant {
            GrnVariant::V1 => self.b.len(),
            _ => self.b.cols(),
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.b.len() + self.w.as_ref().map_or(0, |w| w.len())
    }
}

fn stack_columns(s: &LayerStack<Tensor>) -> Result<Vec<&Tensor>> {
    if s.is_empty() {
        return Err(Error::shape("grn_combine", "empty stack"));
    }
    Ok(s.columns())
}

/// `G·b`.
pub fn combine_v1(s: &LayerStack<Tensor>, b: &[f64]) -> Result<Tensor> {
    let cols = stack_columns(s)?;
    Ok(combine::combine_forward(&cols, GrnVariant::V1, &Tensor::vector(b.to_vec()), None)?.out)
}

/// `(G ⊙ B)·1` for `B` of shape `[d, width]`.
pub fn combine_v2(s: &LayerStack<Tensor>, b: &Tensor) -> Result<Tensor> {
    let cols = stack_columns(s)?;
    Ok(combine::combine_forward(&cols, GrnVariant::V2, b, None)?.out)
}

/// `(G ⊙ (B + 1·relu(wᵀG)))·1`.
pub fn combine_v3(s: &LayerStack<Tensor>, p: &GrnParams) -> Result<Tensor> {
    if p.variant != GrnVariant::V3 {
        return Err(Error::InvalidArgument(format!("combine_v3 given {:?} parameters", p.variant)));
    }
    let cols = stack_columns(s)?;
    Ok(combine::combine_forward(&cols, GrnVariant::V3, &p.b, p.w.as_ref())?.out)
}

/// Dispatches on `p.variant`.
pub fn combine(s: &LayerStack<Tensor>, p: &GrnParams) -> Result<Tensor> {
    let cols = stack_columns(s)?;
    Ok(combine::combine_forward(&cols, p.variant, &p.b, p.w.as_ref())?.out)
}
