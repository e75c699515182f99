//! Low-rank linear regression with deep residual models.
//!
//! Inputs are `x ~ N(0, I_d)`. The identity task regresses `x` on itself;
//! the random-map task regresses `Ax + b` with standard normal `A`, `b`
//! drawn once per seed. The loss is the squared error summed over output
//! dimensions and averaged over the batch.

use std::path::PathBuf;

use crate::autodiff::{AdamW, Graph, Sgd};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::grn::{build_linear_model, LinearModelSpec, ResidualNet, StackMode};
use crate::linalg::matmul_nt;
use crate::rng::{streams, Rng};
use crate::tensor::Tensor;

use super::config::{OptimizerKind, RunConfig, Task};
use super::metrics::{MetricsRecord, MetricsWriter};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.grnckpt";

#[derive(Debug, Clone, PartialEq)]
pub struct Figure1Outcome {
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
    /// `(updates applied, held-out loss)`, starting at 0.
    pub evals: Vec<(u64, f64)>,
    pub final_train_loss: f64,
}

impl Figure1Outcome {
    pub fn eval_at(&self, step: u64) -> Option<f64> {
        self.evals.iter().find(|(s, _)| *s == step).map(|(_, l)| *l)
    }
}

/// The regression target as a row map `Y = X·Mᵀ + 1·cᵀ`.
struct Target {
    map: Option<(Tensor, Vec<f64>)>,
}

impl Target {
    fn new(task: Task, d: usize, rng: &mut Rng) -> Result<Self> {
        match task {
            Task::LinearIdentity => Ok(Target { map: None }),
            Task::LinearRandomMap => {
                let a = Tensor::randn(&[d, d], 1.0, rng);
                let b = rng.normals(d);
                Ok(Target { map: Some((a, b)) })
            }
            other => Err(Error::Config(format!("figure1 cannot run task {other:?}"))),
        }
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        match &self.map {
            None => Ok(x.clone()),
            Some((a, b)) => {
                let mut y = matmul_nt(x, a)?;
                let d = b.len();
                for (k, v) in y.data_mut().iter_mut().enumerate() {
                    *v += b[k % d];
                }
                Ok(y)
            }
        }
    }
}

fn squared_error(pred: &Tensor, y: &Tensor) -> Result<f64> {
    Ok(pred.sub(y)?.frobenius_sq() / pred.rows() as f64)
}

/// Updates after which the held-out loss is recorded.
fn is_eval_step(step: u64, last: u64) -> bool {
    if step == last {
        return true;
    }
    let mut m = 1;
    while m <= step {
        if [m, 2 * m, 5 * m].contains(&step) {
            return true;
        }
        m *= 10;
    }
    false
}

pub fn build_model(cfg: &RunConfig) -> Result<ResidualNet> {
    let f = &cfg.figure1;
    let mut spec = LinearModelSpec::new(cfg.arch, f.d, vec![f.rank; f.layers]);
    spec.activation = f.activation;
    spec.init_std = f.init_std();
    spec.stack_mode = match cfg.k {
        Some(k) => StackMode::FirstLastK(k),
        None => StackMode::Full,
    };
    build_linear_model(spec, &mut Rng::new(cfg.seed).split(streams::INIT))
}

/// Trains one model and writes `metrics.jsonl` and the final checkpoint
/// into `cfg.out_dir`. Every
/// record carries the pre-update training loss of its batch; selected
/// records add `eval_loss`, the held-out loss after the update.
pub fn run_figure1(cfg: &RunConfig) -> Result<Figure1Outcome> {
    cfg.validate()?;
    if !matches!(cfg.task, Task::LinearIdentity | Task::LinearRandomMap) {
        return Err(Error::Config(format!("figure1 needs a linear task, got {:?}", cfg.task)));
    }
    cfg.prepare_out_dir()?;
    let f = &cfg.figure1;
    let root = Rng::new(cfg.seed);
    let target = Target::new(cfg.task, f.d, &mut root.split(streams::TASK))?;
    let mut data = root.split(streams::DATA);
    let x_eval = Tensor::randn(&[f.eval_examples.max(1), f.d], 1.0, &mut root.split(streams::EVAL));
    let y_eval = target.apply(&x_eval)?;

    let mut model = build_model(cfg)?;
    let opt_spec = f.optimizer_for(cfg.task);
    let mut adam = AdamW::new(opt_spec.weight_decay);
    let path = cfg.out_dir.join(METRICS_FILE);
    let mut writer = MetricsWriter::create(&path, cfg.log_wall_time)?;
    let mut evals = vec![(0, squared_error(&model.predict(&x_eval)?, &y_eval)?)];
    let mut final_train_loss = f64::NAN;
    let last = f.batches as u64;

    for step in 1..=last {
        let x = Tensor::randn(&[f.batch, f.d], 1.0, &mut data);
        let y = target.apply(&x)?;
        let mut g = Graph::new();
        let xv = g.constant(x);
        let yv = g.constant(y);
        let pred = model.forward(&mut g, xv)?;
        let diff = g.sub(pred, yv)?;
        let sq = g.mul(diff, diff)?;
        let total = g.sum(sq);
        let loss = g.scale(total, 1.0 / f.batch as f64);
        let loss_value = g.value(loss).data()[0];
        if !loss_value.is_finite() {
            return Err(Error::NonFinite {
                context: format!("training loss at step {step}"),
            });
        }
        let grads = g.backward(loss)?;
        let lr = opt_spec.schedule.lr(step - 1);
        match opt_spec.kind {
            OptimizerKind::Sgd => Sgd.step(&mut model.store, &grads, lr)?,
            OptimizerKind::AdamW => adam.step(&mut model.store, &grads, lr)?,
        }
        final_train_loss = loss_value;
        let mut rec = MetricsRecord::new(step, loss_value).with("lr", lr);
        if is_eval_step(step, last) {
            let e = squared_error(&model.predict(&x_eval)?, &y_eval)?;
            if !e.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("held-out loss after step {step}"),
                });
            }
            evals.push((step, e));
            rec = rec.with("eval_loss", e);
        }
        writer.write(rec)?;
    }
    let checkpoint = cfg.out_dir.join(CHECKPOINT_FILE);
    Checkpoint::from_store(&model.store).save(&checkpoint)?;
    Ok(Figure1Outcome {
        metrics: path,
        checkpoint,
        evals,
        final_train_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grn::Arch;

    fn small(task: Task, arch: Arch, dir: &std::path::Path) -> RunConfig {
        let mut c = RunConfig::new(task, arch, 5, dir);
        c.figure1.d = 8;
        c.figure1.layers = 3;
        c.figure1.rank = 1;
        c.figure1.batch = 16;
        c.figure1.batches = 20;
        c.figure1.eval_examples = 32;
        c
    }

    #[test]
    fn eval_schedule() {
        let steps: Vec<u64> = (1..=1000).filter(|&s| is_eval_step(s, 1000)).collect();
        assert_eq!(steps, vec![1, 2, 5, 10, 20, 50, 100, 200, 500, 1000]);
        assert!(is_eval_step(37, 37));
    }

    #[test]
    fn zero_depth_identity_has_zero_loss() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small(Task::LinearIdentity, Arch::ResNet, dir.path());
        c.figure1.layers = 0;
        let out = run_figure1(&c).unwrap();
        assert!(out.evals.iter().all(|(_, l)| *l == 0.0));
        assert_eq!(out.final_train_loss, 0.0);
    }

    #[test]
    fn replay_is_bit_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_figure1(&small(Task::LinearRandomMap, Arch::V2, a.path())).unwrap();
        run_figure1(&small(Task::LinearRandomMap, Arch::V2, b.path())).unwrap();
        let ma = std::fs::read(a.path().join(METRICS_FILE)).unwrap();
        let mb = std::fs::read(b.path().join(METRICS_FILE)).unwrap();
        assert_eq!(ma, mb);
        let ca = std::fs::read(a.path().join(CHECKPOINT_FILE)).unwrap();
        assert_eq!(ca, std::fs::read(b.path().join(CHECKPOINT_FILE)).unwrap());
        assert_eq!(String::from_utf8(ma).unwrap().lines().count(), 20);
    }

    #[test]
    fn training_reduces_identity_loss() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small(Task::LinearIdentity, Arch::V1, dir.path());
        c.figure1.batches = 200;
        c.figure1.optimizer = Some(super::super::config::OptimizerSpec {
            kind: OptimizerKind::Sgd,
            schedule: crate::autodiff::Schedule::Constant { lr: 0.01 },
            weight_decay: 0.0,
        });
        let out = run_figure1(&c).unwrap();
        assert!(out.eval_at(200).unwrap() < 0.5 * out.eval_at(0).unwrap());
    }

    #[test]
    fn language_arch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let c = small(Task::LinearIdentity, Arch::Dca, dir.path());
        assert!(matches!(run_figure1(&c), Err(Error::Config(_))));
    }
}
