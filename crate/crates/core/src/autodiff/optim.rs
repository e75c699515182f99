//! Named parameter storage, optimizers and learning-rate schedules.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::Gradients;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    value: Tensor,
    decay: bool,
}

/// Trainable tensors keyed by unique dotted names such as `block3.grn_q.b`.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. `decay` marks it for decoupled weight decay.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor, decay: bool) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("parameter name {name:?} registered twice")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Entry { name, value, decay });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn decays(&self, id: ParamId) -> bool {
        self.entries[id.0].decay
    }

    /// Replaces a value; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        self.entries[id.0].value.expect_same_shape(&value, "ParamStore::set")?;
        self.entries[id.0].value = value;
        Ok(())
    }

    /// Total number of scalars across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Scalars held by parameters whose name satisfies `pred`.
    pub fn scalar_count_where(&self, pred: impl Fn(&str) -> bool) -> usize {
        self.entries
            .iter()
            .filter(|e| pred(&e.name))
            .map(|e| e.value.len())
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (ParamId(i), e.name.as_str(), &e.value))
    }
}

fn finite_grads<'a>(store: &ParamStore, grads: &'a Gradients) -> Result<Vec<(ParamId, &'a Tensor)>> {
    let pairs = grads.param_grads();
    for (id, g) in &pairs {
        store.value(*id).expect_same_shape(g, "optimizer step")?;
        if !g.all_finite() {
            return Err(Error::NonFinite {
                context: format!("gradient of {}", store.name(*id)),
            });
        }
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd;

impl Sgd {
    /// `p ← p − lr·g` for every parameter with a gradient.
    pub fn step(&self, store: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<()> {
        for (id, g) in finite_grads(store, grads)? {
            for (p, gv) in store.value_mut(id).data_mut().iter_mut().zip(g.data()) {
                *p -= lr * gv;
            }
        }
        Ok(())
    }
}

/// Adam with decoupled weight decay. Decay multiplies the parameter by
/// `1 − lr·wd` before the moment update, and only touches parameters
/// registered with `decay = true`.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
}

impl AdamW {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.98;
    pub const EPS: f64 = 1e-8;

    pub fn new(weight_decay: f64) -> Self {
        AdamW {
            beta1: Self::BETA1,
            beta2: Self::BETA2,
            eps: Self::EPS,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<()> {
        let pairs = finite_grads(store, grads)?;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        if self.m.len() < store.len() {
            self.m.resize(store.len(), None);
            self.v.resize(store.len(), None);
        }
        for (id, g) in pairs {
            let i = id.index();
            let m = self.m[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.v[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
            let decay = if store.decays(id) { lr * self.weight_decay } else { 0.0 };
            let p = store.value_mut(id).data_mut();
            for k in 0..p.len() {
                let gk = g.data()[k];
                let mk = &mut m.data_mut()[k];
                *mk = self.beta1 * *mk + (1.0 - self.beta1) * gk;
                let mk = *mk;
                let vk = &mut v.data_mut()[k];
                *vk = self.beta2 * *vk + (1.0 - self.beta2) * gk * gk;
                let vk = *vk;
                p[k] -= decay * p[k];
                p[k] -= lr * (mk / bc1) / ((vk / bc2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Learning rate as a function of the zero-based step index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    Constant { lr: f64 },
    /// Linear warmup to `peak` over `warmup` steps, then `peak·sqrt(warmup/s)`
    /// with `s = step + 1`.
    InverseSqrt { peak: f64, warmup: u64 },
}

impl Schedule {
    pub fn lr(&self, step: u64) -> f64 {
        match *self {
            Schedule::Constant { lr } => lr,
            Schedule::InverseSqrt { peak, warmup } => {
                let s = (step + 1) as f64;
                let w = warmup.max(1) as f64;
                if s < w {
                    peak * s / w
                } else {
                    peak * (w / s).sqrt()
                }
            }
        }
    }
}
