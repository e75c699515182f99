//! `grnlab`: command-line driver.
//!
//! Exit status 0 on success, 1 when a run or a verification fails, 2 on
//! any configuration problem (bad flags, bad config file, bad
//! `GRNLAB_THREADS`).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use grnlab::grn::Arch;
use grnlab::harness::{
    dump_weights, run_figure1, run_retrofit, run_toy_lm, run_verify, RunConfig, Suite, Task,
};
use grnlab::theory::{figure4_sweep, to_csv, Figure4Grid};
use grnlab::Error;
use serde_json::json;

const THREADS_VAR: &str = "GRNLAB_THREADS";
const SWEEP_FILE: &str = "sweep.csv";
const REPORT_FILE: &str = "verify_report.json";

#[derive(Parser)]
#[command(name = "grnlab", version, about = "Generalized residual networks: experiments and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every run. Command-line values override the config file.
#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// baseline, resnet, v1, v2, v3, dca or transformer.
    #[arg(long)]
    arch: Option<Arch>,
    /// Keep the input, a running sum and the last `k` outputs.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Figure1Task {
    Identity,
    RandomMap,
}

#[derive(Clone, Copy, ValueEnum)]
enum Panel {
    Rank,
    Kappa,
}

#[derive(Subcommand)]
enum Command {
    /// Low-rank linear regression with deep residual models.
    Figure1 {
        #[command(flatten)]
        common: Common,
        /// Overrides the task of the config file.
        #[arg(long, value_enum)]
        task: Option<Figure1Task>,
    },
    /// Train a byte-level language model.
    TrainLm {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Wrap a trained transformer checkpoint in DCA blocks.
    Retrofit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Threshold and gain sweep over dimension, collective rank and κ.
    TheorySweep {
        #[command(flatten)]
        common: Common,
        /// Built-in grid; ignored when the config carries a sweep.
        #[arg(long, value_enum)]
        panel: Option<Panel>,
    },
    /// Per-column statistics of combination weights in a checkpoint.
    DumpWeights {
        checkpoint: PathBuf,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the oracle battery.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(default_value = "all")]
        suite: Suite,
        #[arg(long)]
        stein_samples: Option<usize>,
    },
}

enum Failure {
    Config(String),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

type Outcome = Result<bool, Failure>;

fn resolve(common: &Common, task: Task, default_arch: Arch, default_out: &str) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => {
            let seed = common
                .seed
                .ok_or_else(|| Failure::Config("--seed is required without --config".into()))?;
            RunConfig::new(task, default_arch, seed, default_out)
        }
    };
    if common.config.is_some() && cfg.task != task {
        let compatible = matches!(
            (cfg.task, task),
            (Task::LinearIdentity | Task::LinearRandomMap, Task::LinearIdentity | Task::LinearRandomMap)
        );
        if !compatible {
            return Err(Failure::Config(format!("config task {:?} does not match this command", cfg.task)));
        }
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    if let Some(a) = common.arch {
        cfg.arch = a;
    }
    if common.k.is_some() {
        cfg.k = common.k;
    }
    Ok(cfg)
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure::Run(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::Run(format!("{}: {e}", path.display())))
}

fn run(cmd: Command) -> Outcome {
    match cmd {
        Command::Figure1 { common, task } => {
            let mut cfg = resolve(&common, Task::LinearIdentity, Arch::V1, "runs/figure1")?;
            match task {
                Some(Figure1Task::Identity) => cfg.task = Task::LinearIdentity,
                Some(Figure1Task::RandomMap) => cfg.task = Task::LinearRandomMap,
                None => {}
            }
            cfg.validate()?;
            let out = run_figure1(&cfg)?;
            let evals: Vec<_> = out.evals.iter().map(|(s, l)| json!({"step": s, "eval_loss": l})).collect();
            println!(
                "{}",
                json!({"metrics": out.metrics, "checkpoint": out.checkpoint, "final_train_loss": out.final_train_loss, "evals": evals})
            );
            Ok(true)
        }
        Command::TrainLm { common, corpus, steps } => {
            let mut cfg = resolve(&common, Task::ToyLm, Arch::Dca, "runs/lm")?;
            if let Some(c) = corpus {
                cfg.lm.corpus = c;
            }
            if let Some(s) = steps {
                cfg.lm.steps = s;
            }
            cfg.validate()?;
            let out = run_toy_lm(&cfg)?;
            println!(
                "{}",
                json!({
                    "metrics": out.metrics,
                    "checkpoint": out.checkpoint,
                    "init_eval_loss": out.init_eval_loss,
                    "final_eval_loss": out.final_eval_loss,
                    "final_eval_perplexity": out.final_perplexity(),
                })
            );
            Ok(true)
        }
        Command::Retrofit { common, baseline, corpus } => {
            let mut cfg = resolve(&common, Task::ToyLm, Arch::Dca, "runs/retrofit")?;
            if let Some(c) = corpus {
                cfg.lm.corpus = c;
            }
            let out = run_retrofit(&cfg, &baseline)?;
            println!(
                "{}",
                json!({"checkpoint": out.checkpoint, "loss_before": out.loss_before, "loss_after": out.loss_after})
            );
            Ok(true)
        }
        Command::TheorySweep { common, panel } => {
            let mut cfg = resolve(&common, Task::TheorySweep, Arch::V1, "runs/sweep")?;
            match panel {
                Some(Panel::Rank) => cfg.sweep = Figure4Grid::rank_panel(),
                Some(Panel::Kappa) => cfg.sweep = Figure4Grid::kappa_panel(),
                None => {}
            }
            let rows = figure4_sweep(&cfg.sweep).map_err(|e| Failure::Config(e.to_string()))?;
            let path = cfg.out_dir.join(SWEEP_FILE);
            write_file(&path, &to_csv(&rows))?;
            println!("{}", json!({"csv": path, "rows": rows.len()}));
            Ok(true)
        }
        Command::DumpWeights { checkpoint, out } => {
            let csv = dump_weights(&checkpoint)?;
            match out {
                Some(p) => write_file(&p, &csv)?,
                None => print!("{csv}"),
            }
            Ok(true)
        }
        Command::Verify {
            common,
            suite,
            stein_samples,
        } => {
            let mut cfg = match (&common.config, common.seed) {
                (None, None) => RunConfig::new(Task::Verify, Arch::V1, 0, "runs/verify"),
                _ => resolve(&common, Task::Verify, Arch::V1, "runs/verify")?,
            };
            cfg.verify.suite = suite;
            if let Some(n) = stein_samples {
                cfg.verify.stein_samples = n;
            }
            let report = run_verify(&cfg.verify, cfg.seed)?;
            for s in &report.suites {
                for c in &s.checks {
                    eprintln!(
                        "{} {:<48} observed {:.3e} tol {:.1e} {}",
                        if c.passed { "PASS" } else { "FAIL" },
                        c.name,
                        c.observed,
                        c.tolerance,
                        c.detail
                    );
                }
            }
            for a in &report.stein {
                eprintln!(
                    "stein d={:<3} mean {:.6} se {:.2e} (d+1)/2={} (d+2)/2={} selected {:?}",
                    a.d, a.scalar.mean, a.scalar.se, a.printed, a.corrected, a.selected
                );
            }
            let text = serde_json::to_string_pretty(&report).map_err(|e| Failure::Run(e.to_string()))?;
            if common.out.is_some() || common.config.is_some() {
                write_file(&cfg.out_dir.join(REPORT_FILE), &text)?;
            }
            println!("{text}");
            Ok(report.passed)
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Config(format!("{THREADS_VAR} must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Config(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|_| run(cli.command)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
