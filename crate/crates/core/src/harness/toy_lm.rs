//! Byte-level language-model training, warm starts and retrofitting.
//!
//! Batches are windows of the corpus at offsets drawn from the data stream,
//! so two runs with equal seeds see identical batches whatever the
//! architecture. Evaluation uses a fixed set of windows from the eval
//! stream.

use std::fs;
use std::path::{Path, PathBuf};

use crate::autodiff::{AdamW, Graph, Sgd};
use crate::checkpoint::Checkpoint;
use crate::dca::{retrofit, Batch, LmConfig, LmModel};
use crate::error::{Error, Result};
use crate::grn::Arch;
use crate::rng::{streams, Rng};

use super::config::{OptimizerKind, RunConfig, Task};
use super::metrics::{MetricsRecord, MetricsWriter};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.grnckpt";
pub const BYTE_VOCAB: usize = 256;

pub fn load_corpus(path: &Path, seq_len: usize) -> Result<Vec<usize>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < seq_len + 1 {
        return Err(Error::InvalidArgument(format!(
            "corpus {} has {} bytes; need at least seq_len + 1 = {}",
            path.display(),
            bytes.len(),
            seq_len + 1
        )));
    }
    Ok(bytes.into_iter().map(usize::from).collect())
}

/// `batch` windows of `seq_len` inputs plus their shifted targets.
pub fn sample_batch(corpus: &[usize], seq_len: usize, batch: usize, rng: &mut Rng) -> Result<(Batch, Vec<usize>)> {
    let span = (corpus.len() - seq_len) as u64;
    let mut seqs = Vec::with_capacity(batch);
    let mut targets = Vec::with_capacity(batch * seq_len);
    for _ in 0..batch {
        let o = rng.below(span) as usize;
        seqs.push(corpus[o..o + seq_len].to_vec());
        targets.extend_from_slice(&corpus[o + 1..o + seq_len + 1]);
    }
    Ok((Batch::new(&seqs)?, targets))
}

pub fn lm_config(cfg: &RunConfig) -> LmConfig {
    LmConfig {
        arch: cfg.arch,
        vocab: BYTE_VOCAB,
        d: cfg.lm.d,
        heads: cfg.lm.heads,
        blocks: cfg.lm.blocks,
        max_seq: cfg.lm.seq_len,
        k: cfg.k,
        init_std: cfg.lm.init_std,
        shared_qkv_norm: true,
    }
}

fn eval_set(corpus: &[usize], cfg: &RunConfig) -> Result<Vec<(Batch, Vec<usize>)>> {
    let mut rng = Rng::new(cfg.seed).split(streams::EVAL);
    (0..cfg.lm.eval_batches)
        .map(|_| sample_batch(corpus, cfg.lm.seq_len, cfg.lm.batch, &mut rng))
        .collect()
}

pub fn eval_loss(model: &LmModel, set: &[(Batch, Vec<usize>)]) -> Result<f64> {
    let mut total = 0.0;
    for (b, t) in set {
        total += model.eval_loss(b, t)?;
    }
    Ok(total / set.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmOutcome {
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
    pub init_eval_loss: f64,
    pub final_eval_loss: f64,
}

impl LmOutcome {
    pub fn final_perplexity(&self) -> f64 {
        self.final_eval_loss.exp()
    }
}

/// Trains for `cfg.lm.steps` updates. Record 0 holds the held-out loss at
/// initialisation; record `s ≥ 1` holds the pre-update loss of batch `s`.
/// A checkpoint is written before the first update, every
/// `checkpoint_every` updates and at the end. A non-finite loss or
/// gradient aborts the run and leaves the last finite checkpoint in place.
pub fn run_toy_lm(cfg: &RunConfig) -> Result<LmOutcome> {
    cfg.validate()?;
    if cfg.task != Task::ToyLm {
        return Err(Error::Config(format!("train-lm needs task toy_lm, got {:?}", cfg.task)));
    }
    let l = &cfg.lm;
    let corpus = load_corpus(&l.corpus, l.seq_len)?;
    cfg.prepare_out_dir()?;
    let root = Rng::new(cfg.seed);
    let mut model = LmModel::new(lm_config(cfg), &mut root.split(streams::INIT)).map_err(as_config)?;
    if let Some(p) = &l.init_checkpoint {
        Checkpoint::load(p)?.apply_to(&mut model.store)?;
    }
    let evals = eval_set(&corpus, cfg)?;
    let ckpt_path = cfg.out_dir.join(CHECKPOINT_FILE);
    let path = cfg.out_dir.join(METRICS_FILE);
    let mut writer = MetricsWriter::create(&path, cfg.log_wall_time)?;
    let mut data = root.split(streams::DATA);
    let mut adam = AdamW::new(l.optimizer.weight_decay);

    let init_eval_loss = eval_loss(&model, &evals)?;
    writer.write(
        MetricsRecord::new(0, init_eval_loss)
            .with("eval_loss", init_eval_loss)
            .with("eval_perplexity", init_eval_loss.exp()),
    )?;
    Checkpoint::from_store(&model.store).save(&ckpt_path)?;
    let mut final_eval_loss = init_eval_loss;

    for step in 1..=l.steps as u64 {
        let (batch, targets) = sample_batch(&corpus, l.seq_len, l.batch, &mut data)?;
        let mut g = Graph::new();
        let loss = model.loss(&mut g, &batch, &targets)?;
        let lv = g.value(loss).data()[0];
        if !lv.is_finite() {
            return Err(Error::NonFinite {
                context: format!("loss at step {step}; last good checkpoint kept at {}", ckpt_path.display()),
            });
        }
        let grads = g.backward(loss)?;
        let grad_norm = grads
            .param_grads()
            .iter()
            .map(|(_, t)| t.frobenius_sq())
            .sum::<f64>()
            .sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite {
                context: format!("gradient at step {step}; last good checkpoint kept at {}", ckpt_path.display()),
            });
        }
        let lr = l.optimizer.schedule.lr(step - 1);
        match l.optimizer.kind {
            OptimizerKind::AdamW => adam.step(&mut model.store, &grads, lr)?,
            OptimizerKind::Sgd => Sgd.step(&mut model.store, &grads, lr)?,
        }
        let finite = model.store.iter().all(|(_, _, t)| t.all_finite());
        if !finite {
            return Err(Error::NonFinite {
                context: format!("parameters after step {step}; last good checkpoint kept at {}", ckpt_path.display()),
            });
        }
        let mut rec = MetricsRecord::new(step, lv)
            .with("perplexity", lv.exp())
            .with("grad_norm", grad_norm)
            .with("lr", lr);
        let last = step == l.steps as u64;
        if last || (l.eval_every > 0 && step % l.eval_every as u64 == 0) {
            final_eval_loss = eval_loss(&model, &evals)?;
            rec = rec
                .with("eval_loss", final_eval_loss)
                .with("eval_perplexity", final_eval_loss.exp());
        }
        writer.write(rec)?;
        if last || (l.checkpoint_every > 0 && step % l.checkpoint_every as u64 == 0) {
            Checkpoint::from_store(&model.store).save(&ckpt_path)?;
        }
    }
    Ok(LmOutcome {
        metrics: path,
        checkpoint: ckpt_path,
        init_eval_loss,
        final_eval_loss,
    })
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrofitOutcome {
    pub checkpoint: PathBuf,
    pub loss_before: f64,
    pub loss_after: f64,
}

/// Loads a transformer checkpoint, wraps it in DCA blocks at `b = 1,
/// w = 0` and saves the result. Both losses use the run's eval windows.
pub fn run_retrofit(cfg: &RunConfig, baseline_checkpoint: &Path) -> Result<RetrofitOutcome> {
    let mut base_cfg = cfg.clone();
    base_cfg.task = Task::ToyLm;
    base_cfg.arch = Arch::Transformer;
    base_cfg.k = None;
    base_cfg.validate()?;
    let corpus = load_corpus(&cfg.lm.corpus, cfg.lm.seq_len)?;
    let mut base = LmModel::new(lm_config(&base_cfg), &mut Rng::new(0)).map_err(as_config)?;
    Checkpoint::load(baseline_checkpoint)?.apply_to(&mut base.store)?;
    let evals = eval_set(&corpus, cfg)?;
    let loss_before = eval_loss(&base, &evals)?;
    let dca = retrofit(&base, cfg.k)?;
    let loss_after = eval_loss(&dca, &evals)?;
    cfg.prepare_out_dir()?;
    let checkpoint = cfg.out_dir.join(CHECKPOINT_FILE);
    Checkpoint::from_store(&dca.store).save(&checkpoint)?;
    Ok(RetrofitOutcome {
        checkpoint,
        loss_before,
        loss_after,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Schedule;
    use crate::harness::metrics::read_metrics;

    fn tiny(dir: &Path, corpus: &Path, arch: Arch) -> RunConfig {
        let mut c = RunConfig::new(Task::ToyLm, arch, 9, dir);
        c.lm.corpus = corpus.to_path_buf();
        c.lm.d = 8;
        c.lm.heads = 2;
        c.lm.blocks = 2;
        c.lm.seq_len = 8;
        c.lm.batch = 4;
        c.lm.steps = 6;
        c.lm.checkpoint_every = 2;
        c.lm.eval_every = 3;
        c.lm.eval_batches = 2;
        c
    }

    fn corpus(dir: &Path, text: &str) -> PathBuf {
        let p = dir.join("corpus.txt");
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn missing_or_short_corpus_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny(dir.path(), &dir.path().join("nope.txt"), Arch::Dca);
        assert!(matches!(run_toy_lm(&c), Err(Error::Io { .. })));
        let p = corpus(dir.path(), "short");
        assert!(run_toy_lm(&tiny(dir.path(), &p, Arch::Dca)).is_err());
    }

    #[test]
    fn dca_and_baseline_start_equal() {
        let dir = tempfile::tempdir().unwrap();
        let p = corpus(dir.path(), &"the cat sat on the mat. ".repeat(20));
        let a = run_toy_lm(&tiny(&dir.path().join("a"), &p, Arch::Dca)).unwrap();
        let b = run_toy_lm(&tiny(&dir.path().join("b"), &p, Arch::Transformer)).unwrap();
        assert!((a.init_eval_loss - b.init_eval_loss).abs() <= 1e-10);
        let ra = read_metrics(&a.metrics).unwrap();
        let rb = read_metrics(&b.metrics).unwrap();
        assert!((ra[1].loss - rb[1].loss).abs() <= 1e-10);
        assert_eq!(ra.len(), 7);
    }

    #[test]
    fn repeated_byte_corpus_is_learned() {
        let dir = tempfile::tempdir().unwrap();
        let p = corpus(dir.path(), &"a".repeat(200));
        let mut c = tiny(&dir.path().join("run"), &p, Arch::Dca);
        c.lm.optimizer.schedule = Schedule::Constant { lr: 1e-2 };
        c.lm.steps = 150;
        let out = run_toy_lm(&c).unwrap();
        assert!(out.final_perplexity() <= 1.05, "{}", out.final_perplexity());
    }

    #[test]
    fn replay_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = corpus(dir.path(), &"replay me, replay me again. ".repeat(10));
        let runs: Vec<LmOutcome> = ["a", "b"]
            .iter()
            .map(|n| run_toy_lm(&tiny(&dir.path().join(n), &p, Arch::Dca)).unwrap())
            .collect();
        assert_eq!(fs::read(&runs[0].metrics).unwrap(), fs::read(&runs[1].metrics).unwrap());
        assert_eq!(fs::read(&runs[0].checkpoint).unwrap(), fs::read(&runs[1].checkpoint).unwrap());
    }

    #[test]
    fn nan_aborts_and_keeps_last_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let p = corpus(dir.path(), &"abcdefgh".repeat(20));
        let mut c = tiny(&dir.path().join("run"), &p, Arch::Dca);
        c.lm.optimizer.kind = OptimizerKind::Sgd;
        c.lm.optimizer.schedule = Schedule::Constant { lr: 1e300 };
        c.lm.steps = 50;
        let err = run_toy_lm(&c).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }), "{err}");
        let ck = Checkpoint::load(&dir.path().join("run").join(CHECKPOINT_FILE)).unwrap();
        assert!(ck.records.iter().all(|r| r.value.all_finite()));
        let mut model = LmModel::new(lm_config(&c), &mut Rng::new(1)).unwrap();
        ck.apply_to(&mut model.store).unwrap();
    }

    #[test]
    fn retrofit_keeps_eval_loss() {
        let dir = tempfile::tempdir().unwrap();
        let p = corpus(dir.path(), &"hello world ".repeat(30));
        let base = run_toy_lm(&tiny(&dir.path().join("base"), &p, Arch::Transformer)).unwrap();
        let mut c = tiny(&dir.path().join("retro"), &p, Arch::Dca);
        c.k = Some(1);
        let r = run_retrofit(&c, &base.checkpoint).unwrap();
        assert!((r.loss_before - r.loss_after).abs() <= 1e-6);
        assert!((r.loss_before - base.final_eval_loss).abs() <= 1e-12);
    }
}
