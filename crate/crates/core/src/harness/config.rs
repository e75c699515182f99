//! Run configuration: one JSON document per run.
//!
//! ```json
//! {
//!   "version": 1,
//!   "task": "linear_identity",
//!   "arch": "v1",
//!   "seed": 7,
//!   "out_dir": "runs/identity-v1",
//!   "k": null,
//!   "log_wall_time": false,
//!   "figure1": { "d": 100, "layers": 10, "rank": 3, "batch": 100, "batches": 1000 },
//!   "lm": { "corpus": "data/tiny.txt", "steps": 200 }
//! }
//! ```
//!
//! Sections not used by the task may be omitted and take their defaults.
//! Unknown keys are rejected at every level.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::Schedule;
use crate::error::{Error, Result};
use crate::grn::{Activation, Arch};
use crate::theory::Figure4Grid;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    LinearIdentity,
    LinearRandomMap,
    ToyLm,
    TheorySweep,
    Verify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    AdamW,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    pub schedule: Schedule,
    /// Decoupled decay for AdamW; ignored by SGD.
    #[serde(default)]
    pub weight_decay: f64,
}

impl OptimizerSpec {
    fn validate(&self) -> Result<()> {
        let lr_ok = match self.schedule {
            Schedule::Constant { lr } => lr.is_finite() && lr > 0.0,
            Schedule::InverseSqrt { peak, .. } => peak.is_finite() && peak > 0.0,
        };
        if !lr_ok {
            return Err(Error::Config("learning rate must be finite and positive".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be finite and ≥ 0".into()));
        }
        Ok(())
    }
}

/// Low-rank linear experiment: `layers` maps of rank `rank` on `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Figure1Params {
    pub d: usize,
    pub layers: usize,
    pub rank: usize,
    pub batch: usize,
    pub batches: usize,
    /// `None` draws factors with the Glorot scale `√(2 / (d + rank))`.
    pub init_std: Option<f64>,
    pub activation: Activation,
    /// `None` picks plain SGD at the task's default rate.
    pub optimizer: Option<OptimizerSpec>,
    /// Held-out examples scored after selected updates.
    pub eval_examples: usize,
}

impl Default for Figure1Params {
    fn default() -> Self {
        Figure1Params {
            d: 100,
            layers: 10,
            rank: 3,
            batch: 100,
            batches: 1000,
            init_std: None,
            activation: Activation::Linear,
            optimizer: None,
            eval_examples: 1000,
        }
    }
}

impl Figure1Params {
    pub fn init_std(&self) -> f64 {
        self.init_std
            .unwrap_or_else(|| (2.0 / (self.d + self.rank) as f64).sqrt())
    }

    /// Default rates are the largest of `{1e-5, 3e-5, 1e-4, 3e-4}` (random
    /// map) and `{5e-3, 1e-2, 2e-2}` (identity) at which the plain residual
    /// model trains without overflow on seeds 0..5 at the default sizes.
    pub fn optimizer_for(&self, task: Task) -> OptimizerSpec {
        self.optimizer.unwrap_or(OptimizerSpec {
            kind: OptimizerKind::Sgd,
            schedule: Schedule::Constant {
                lr: if task == Task::LinearRandomMap { 1e-4 } else { 1e-2 },
            },
            weight_decay: 0.0,
        })
    }
}

/// Byte-level language-model run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmParams {
    pub corpus: PathBuf,
    pub d: usize,
    pub heads: usize,
    pub blocks: usize,
    pub seq_len: usize,
    pub batch: usize,
    pub steps: usize,
    pub init_std: f64,
    pub optimizer: OptimizerSpec,
    pub checkpoint_every: usize,
    pub eval_every: usize,
    pub eval_batches: usize,
    /// Warm start from a checkpoint of a compatible model.
    pub init_checkpoint: Option<PathBuf>,
}

impl Default for LmParams {
    fn default() -> Self {
        LmParams {
            corpus: PathBuf::from("corpus.txt"),
            d: 32,
            heads: 4,
            blocks: 4,
            seq_len: 32,
            batch: 8,
            steps: 300,
            init_std: 0.02,
            optimizer: OptimizerSpec {
                kind: OptimizerKind::AdamW,
                schedule: Schedule::InverseSqrt { peak: 3e-3, warmup: 100 },
                weight_decay: 0.1,
            },
            checkpoint_every: 100,
            eval_every: 100,
            eval_batches: 4,
            init_checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyParams {
    pub suite: super::verify::Suite,
    /// Samples per Monte-Carlo adjudication.
    pub stein_samples: usize,
    /// Added to every analytic gradient; nonzero makes the grads suite fail.
    pub grad_fault: f64,
}

impl Default for VerifyParams {
    fn default() -> Self {
        VerifyParams {
            suite: super::verify::Suite::All,
            stein_samples: 1_000_000,
            grad_fault: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub task: Task,
    pub arch: Arch,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// First-and-last-`k` stack truncation; `None` keeps the full stack.
    #[serde(default)]
    pub k: Option<usize>,
    /// Off by default so metrics files are reproducible byte for byte.
    #[serde(default)]
    pub log_wall_time: bool,
    #[serde(default)]
    pub figure1: Figure1Params,
    #[serde(default)]
    pub lm: LmParams,
    #[serde(default = "Figure4Grid::rank_panel")]
    pub sweep: Figure4Grid,
    #[serde(default)]
    pub verify: VerifyParams,
}

impl RunConfig {
    /// Defaults for `task` with the given seed and output directory.
    pub fn new(task: Task, arch: Arch, seed: u64, out_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            task,
            arch,
            seed,
            out_dir: out_dir.into(),
            k: None,
            log_wall_time: false,
            figure1: Figure1Params::default(),
            lm: LmParams::default(),
            sweep: Figure4Grid::rank_panel(),
            verify: VerifyParams::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} is not supported; expected {CONFIG_VERSION}",
                self.version
            )));
        }
        match self.task {
            Task::LinearIdentity | Task::LinearRandomMap => {
                if self.arch.is_language_model() {
                    return Err(Error::Config(format!("{} cannot run a linear task", self.arch)));
                }
                let f = &self.figure1;
                if f.d == 0 || f.rank == 0 || f.batch == 0 {
                    return Err(Error::Config("figure1 d, rank and batch must be positive".into()));
                }
                if !(f.init_std().is_finite() && f.init_std() >= 0.0) {
                    return Err(Error::Config("figure1 init_std must be finite and ≥ 0".into()));
                }
                f.optimizer_for(self.task).validate()?;
            }
            Task::ToyLm => {
                if !self.arch.is_language_model() {
                    return Err(Error::Config(format!(
                        "toy_lm needs arch transformer or dca, got {}",
                        self.arch
                    )));
                }
                let l = &self.lm;
                if l.seq_len == 0 || l.batch == 0 || l.eval_batches == 0 {
                    return Err(Error::Config("lm seq_len, batch and eval_batches must be positive".into()));
                }
                l.optimizer.validate()?;
            }
            Task::TheorySweep | Task::Verify => {}
        }
        Ok(())
    }

    /// Creates the output directory.
    pub fn prepare_out_dir(&self) -> Result<()> {
        fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_lossless() {
        let mut c = RunConfig::new(Task::ToyLm, Arch::Dca, 42, "out/x");
        c.k = Some(2);
        c.lm.init_checkpoint = Some("a.ckpt".into());
        let back = RunConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn minimal_document_takes_defaults() {
        let c = RunConfig::from_json(
            r#"{"version":1,"task":"linear_identity","arch":"resnet","seed":3,"out_dir":"o"}"#,
        )
        .unwrap();
        assert_eq!(c.figure1, Figure1Params::default());
        assert_eq!(
            c.figure1.optimizer_for(Task::LinearIdentity).schedule,
            Schedule::Constant { lr: 1e-2 }
        );
    }

    #[test]
    fn rejects_bad_documents() {
        let bad = [
            r#"{"version":2,"task":"linear_identity","arch":"resnet","seed":3,"out_dir":"o"}"#,
            r#"{"version":1,"task":"linear_identity","arch":"resnet","out_dir":"o"}"#,
            r#"{"version":1,"task":"linear_identity","arch":"resnet","seed":3,"out_dir":"o","extra":1}"#,
            r#"{"version":1,"task":"linear_identity","arch":"dca","seed":3,"out_dir":"o"}"#,
            r#"{"version":1,"task":"toy_lm","arch":"v1","seed":3,"out_dir":"o"}"#,
            r#"{"version":1,"task":"linear_identity","arch":"resnet","seed":3,"out_dir":"o","figure1":{"dd":1}}"#,
        ];
        for text in bad {
            assert!(matches!(RunConfig::from_json(text), Err(Error::Config(_))), "{text}");
        }
    }
}
