//! The oracle battery behind `grnlab verify`.
//!
//! Each suite returns named checks with the observed discrepancy and the
//! tolerance it was held to. Suites run concurrently; the report lists them
//! in the fixed order of [`Suite::ALL_SUITES`] whatever the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{check_gradient, Graph, Var, DEFAULT_GRAD_STEP};
use crate::dca::{retrofit, Batch, LmConfig, LmModel};
use crate::error::Result;
use crate::grn::{Arch, GrnVariant};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::theory::oracle::{
    adjudicate_stein, eckart_young_tail, exhaustive_equal_param, random_psd_target, threshold_chain_root,
    SteinAdjudication,
};
use crate::theory::{
    bounds, construct_v1, construct_v2, equal_param_rank, excess_risk, figure4_sweep, thr_v1, thr_v2, thresholds,
    Figure4Grid, SpectrumSpec, SteinConstant,
};

use super::config::VerifyParams;

/// Relative error bound for every gradient check.
pub const GRAD_TOLERANCE: f64 = 1e-5;
pub const STEIN_DIMS: [usize; 3] = [1, 3, 10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    #[default]
    All,
    Grads,
    Theory,
    Stein,
    Equivalence,
}

impl Suite {
    pub const ALL_SUITES: [Suite; 4] = [Suite::Grads, Suite::Theory, Suite::Stein, Suite::Equivalence];

    fn expand(self) -> Vec<Suite> {
        match self {
            Suite::All => Self::ALL_SUITES.to_vec(),
            s => vec![s],
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "all" => Ok(Suite::All),
            "grads" => Ok(Suite::Grads),
            "theory" => Ok(Suite::Theory),
            "stein" => Ok(Suite::Stein),
            "equivalence" => Ok(Suite::Equivalence),
            other => Err(format!("unknown suite {other:?}; expected all, grads, theory, stein or equivalence")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Worst observed discrepancy; 0 or 1 for yes/no checks.
    pub observed: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl Check {
    pub fn le(name: impl Into<String>, observed: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            passed: observed <= tolerance,
            observed,
            tolerance,
            detail: String::new(),
        }
    }

    pub fn flag(name: impl Into<String>, ok: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed: ok,
            observed: if ok { 0.0 } else { 1.0 },
            tolerance: 0.0,
            detail: detail.into(),
        }
    }

    fn detail(mut self, d: impl Into<String>) -> Self {
        self.detail = d.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub passed: bool,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub passed: bool,
    /// The Stein constant the Monte-Carlo adjudication supports, when the
    /// stein suite ran and all dimensions agreed.
    pub stein_constant: Option<SteinConstant>,
    pub stein: Vec<SteinAdjudication>,
    pub suites: Vec<SuiteReport>,
}

// ---------------------------------------------------------------- grads

pub type OpFn = fn(&mut Graph, &[Var]) -> Result<Var>;

/// One differentiable operation with a generator of generic inputs.
#[derive(Clone, Copy)]
pub struct OpCase {
    pub name: &'static str,
    pub inputs: fn(&mut Rng) -> Vec<Tensor>,
    pub f: OpFn,
}

fn randn(rng: &mut Rng, shape: &[usize]) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

/// Entries at least 0.1 away from the relu kink.
fn off_kink(rng: &mut Rng, shape: &[usize]) -> Tensor {
    randn(rng, shape).map(|v| v + 0.1f64.copysign(v))
}

fn two(rng: &mut Rng) -> Vec<Tensor> {
    vec![randn(rng, &[3, 4]), randn(rng, &[3, 4])]
}

fn one(rng: &mut Rng) -> Vec<Tensor> {
    vec![randn(rng, &[3, 4])]
}

fn stack3(rng: &mut Rng) -> Vec<Tensor> {
    (0..3).map(|_| randn(rng, &[2, 4])).collect()
}

/// Every graph operation, each checked through its public constructor.
pub fn op_catalog() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "matmul",
            inputs: |r| vec![randn(r, &[3, 4]), randn(r, &[4, 2])],
            f: |g, x| g.matmul(x[0], x[1]),
        },
        OpCase {
            name: "add",
            inputs: two,
            f: |g, x| g.add(x[0], x[1]),
        },
        OpCase {
            name: "sub",
            inputs: two,
            f: |g, x| g.sub(x[0], x[1]),
        },
        OpCase {
            name: "mul",
            inputs: two,
            f: |g, x| g.mul(x[0], x[1]),
        },
        OpCase {
            name: "scale",
            inputs: one,
            f: |g, x| Ok(g.scale(x[0], -1.7)),
        },
        OpCase {
            name: "add_row",
            inputs: |r| vec![randn(r, &[3, 4]), randn(r, &[4])],
            f: |g, x| g.add_row(x[0], x[1]),
        },
        OpCase {
            name: "mul_row",
            inputs: |r| vec![randn(r, &[3, 4]), randn(r, &[4])],
            f: |g, x| g.mul_row(x[0], x[1]),
        },
        OpCase {
            name: "relu",
            inputs: |r| vec![off_kink(r, &[3, 4])],
            f: |g, x| Ok(g.relu(x[0])),
        },
        OpCase {
            name: "softmax_rows",
            inputs: |r| vec![randn(r, &[3, 5])],
            f: |g, x| g.softmax_rows(x[0]),
        },
        OpCase {
            name: "causal_mask+softmax_rows",
            inputs: |r| vec![randn(r, &[4, 4])],
            f: |g, x| {
                let m = g.causal_mask(x[0])?;
                g.softmax_rows(m)
            },
        },
        OpCase {
            name: "layernorm_rows",
            inputs: |r| vec![randn(r, &[3, 6])],
            f: |g, x| g.layernorm_rows(x[0], 1e-6),
        },
        OpCase {
            name: "gather",
            inputs: |r| vec![randn(r, &[5, 3])],
            f: |g, x| g.gather(x[0], &[0, 2, 2, 4]),
        },
        OpCase {
            name: "sum",
            inputs: one,
            f: |g, x| Ok(g.sum(x[0])),
        },
        OpCase {
            name: "mean",
            inputs: one,
            f: |g, x| g.mean(x[0]),
        },
        OpCase {
            name: "cross_entropy",
            inputs: |r| vec![randn(r, &[4, 5])],
            f: |g, x| g.cross_entropy(x[0], &[0, 3, 1, 4]),
        },
        OpCase {
            name: "transpose",
            inputs: one,
            f: |g, x| g.transpose(x[0]),
        },
        OpCase {
            name: "slice_rows",
            inputs: |r| vec![randn(r, &[5, 3])],
            f: |g, x| g.slice_rows(x[0], 1, 3),
        },
        OpCase {
            name: "slice_cols",
            inputs: |r| vec![randn(r, &[3, 5])],
            f: |g, x| g.slice_cols(x[0], 2, 2),
        },
        OpCase {
            name: "concat_rows",
            inputs: |r| vec![randn(r, &[2, 3]), randn(r, &[3, 3])],
            f: |g, x| g.concat_rows(&[x[0], x[1]]),
        },
        OpCase {
            name: "concat_cols",
            inputs: |r| vec![randn(r, &[3, 2]), randn(r, &[3, 4])],
            f: |g, x| g.concat_cols(&[x[0], x[1]]),
        },
        OpCase {
            name: "grn_combine_v1",
            inputs: |r| {
                let mut v = stack3(r);
                v.push(randn(r, &[3]));
                v
            },
            f: |g, x| g.grn_combine(&x[..3], GrnVariant::V1, x[3], None),
        },
        OpCase {
            name: "grn_combine_v2",
            inputs: |r| {
                let mut v = stack3(r);
                v.push(randn(r, &[4, 3]));
                v
            },
            f: |g, x| g.grn_combine(&x[..3], GrnVariant::V2, x[3], None),
        },
        OpCase {
            name: "grn_combine_v3",
            inputs: |r| {
                let mut v = stack3(r);
                v.push(randn(r, &[4, 3]));
                v.push(randn(r, &[4]));
                v
            },
            f: |g, x| g.grn_combine(&x[..3], GrnVariant::V3, x[3], Some(x[4])),
        },
        OpCase {
            name: "attention",
            inputs: |r| (0..3).map(|_| randn(r, &[6, 4])).collect(),
            f: |g, x| g.attention(x[0], x[1], x[2], 2, 3),
        },
        OpCase {
            name: "prenorm_block",
            inputs: |r| vec![randn(r, &[3, 4]), randn(r, &[4, 8]), randn(r, &[8]), randn(r, &[8, 4])],
            f: |g, x| {
                let n = g.layernorm_rows(x[0], 1e-6)?;
                let h = g.matmul(n, x[1])?;
                let h = g.add_row(h, x[2])?;
                let h = g.relu(h);
                let o = g.matmul(h, x[3])?;
                g.add(o, x[0])
            },
        },
    ]
}

/// Worst relative error of each op over `seeds`.
pub fn grad_checks(seeds: std::ops::Range<u64>, fault: f64) -> Result<Vec<Check>> {
    op_catalog()
        .par_iter()
        .map(|case| {
            let mut worst = 0.0f64;
            let mut at = 0;
            for seed in seeds.clone() {
                let inputs = (case.inputs)(&mut Rng::new(seed));
                let rep = check_gradient(&case.f, &inputs, DEFAULT_GRAD_STEP, fault)?;
                if rep.max_rel_error > worst || rep.max_rel_error.is_nan() {
                    worst = if rep.max_rel_error.is_nan() { f64::INFINITY } else { rep.max_rel_error };
                    at = seed;
                }
            }
            Ok(Check::le(format!("grad/{}", case.name), worst, GRAD_TOLERANCE)
                .detail(format!("{} seeds, worst at seed {at}", seeds.end - seeds.start)))
        })
        .collect()
}

// --------------------------------------------------------------- theory

/// A random PSD-shifted target `I + QΛQᵀ` of size at most 20 with a
/// random rank.
pub fn random_theory_target(seed: u64) -> (Tensor, usize) {
    let mut rng = Rng::new(seed);
    let d = 3 + rng.below(18) as usize;
    let lo = rng.uniform(0.1, 2.0);
    let hi = lo + rng.uniform(0.0, 5.0);
    let (a, _) = random_psd_target(d, lo, hi, &mut rng);
    let r = rng.below(d as u64) as usize;
    (a, r)
}

/// Residual risk against Eckart–Young, the v1/v2 constructions against
/// their formulas and the ordering of all four bounds.
pub fn theory_exactness(targets: u64, seed: u64) -> Result<Vec<Check>> {
    let rows: Vec<(f64, f64, f64, f64)> = (0..targets)
        .into_par_iter()
        .map(|i| {
            let (a, r) = random_theory_target(seed.wrapping_add(i));
            let b = bounds(&a, r)?;
            let tail = eckart_young_tail(&a, r)?;
            let e1 = (excess_risk(&a, &construct_v1(&a, r)?.est)? - b.er_v1).abs();
            let e2 = (excess_risk(&a, &construct_v2(&a, r)?.est)? - (b.delta_fro_sq - b.diag_sq)).abs();
            let order = (b.er_v3 - b.er_v2).max(b.er_v2 - b.er_v1).max(b.er_v1 - b.er_res).max(0.0);
            Ok(((b.er_res - tail).abs() / tail.max(1.0), e1, e2, order))
        })
        .collect::<Result<_>>()?;
    let worst = |f: fn(&(f64, f64, f64, f64)) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    let n = format!("{targets} targets");
    let hand = {
        let a = Tensor::diag(&[4.0, 3.0, 2.0, 1.0]);
        let b = bounds(&a, 2)?;
        (b.er_res - 1.0).abs().max((b.er_v1 - 0.5).abs())
    };
    Ok(vec![
        Check::le("theory/er_res_vs_eckart_young", worst(|r| r.0), 1e-10).detail(n.clone()),
        Check::le("theory/construct_v1_attains_bound", worst(|r| r.1), 1e-9).detail(n.clone()),
        Check::le("theory/construct_v2_attains_bound", worst(|r| r.2), 1e-9).detail(n.clone()),
        Check::le("theory/bound_ordering", worst(|r| r.3), 1e-9).detail(n),
        Check::le("theory/diagonal_hand_example", hand, 1e-12),
    ])
}

/// Equal-parameter trade-off at the worst integer rank, threshold
/// plug-ins, inequality-chain roots and the exhaustive Lemma-2 search.
pub fn theory_tradeoff(specs: usize, seed: u64) -> Result<Vec<Check>> {
    let mut rng = Rng::new(seed);
    let mut worst_margin = f64::INFINITY;
    let mut checked = 0;
    while checked < specs {
        let d = 10 + rng.below(31) as usize;
        let k = rng.uniform(0.2, 1.0);
        let hi = rng.uniform(1.0, 5.0);
        let max_r = ((thr_v1(k) * d as f64).floor() as usize).min(d - 1);
        if max_r < 1 {
            continue;
        }
        let r = 1 + rng.below(max_r as u64) as usize;
        let spec = SpectrumSpec::new(d, k * hi, hi, r, 1)?;
        if !thresholds(&spec)?.v1_holds {
            continue;
        }
        let (a, _) = random_psd_target(d, spec.lambda_min, spec.lambda_max, &mut rng);
        let rp = equal_param_rank(&spec, GrnVariant::V1)?.worst_int;
        let res = bounds(&a, r)?.er_res;
        let v1 = bounds(&a, rp)?.er_v1;
        worst_margin = worst_margin.min(res - v1);
        checked += 1;
    }
    let plug = (thr_v1(1.0) - 1.0).abs().max(thr_v1(0.0).abs());

    let mut chain = 0.0f64;
    for d in [10usize, 100, 500] {
        for i in 1..20 {
            let k = i as f64 / 20.0;
            chain = chain.max((threshold_chain_root(GrnVariant::V1, k, d) - thr_v1(k)).abs());
            let c2 = threshold_chain_root(GrnVariant::V2, k, d);
            chain = chain.max((c2 - thr_v2(k, d)).abs() / c2.max(1.0));
        }
    }

    let mut table_ok = true;
    let mut lemma_ok = true;
    for variant in [GrnVariant::V1, GrnVariant::V2, GrnVariant::V3] {
        for (d, r) in [(100usize, 30usize), (20, 5), (50, 49), (8, 2), (500, 90)] {
            let spec = SpectrumSpec::new(d, 1.0, 2.0, r, 1)?;
            let fast = equal_param_rank(&spec, variant)?;
            let table: Vec<(usize, usize)> = fast.table.iter().map(|row| (row.t_prime, row.r_prime_int)).collect();
            table_ok &= table == exhaustive_equal_param(variant, d, r);
            lemma_ok &= fast.worst_real >= fast.lemma_bound - 1e-12;
        }
    }
    Ok(vec![
        Check::flag(
            "theory/v1_equal_param_beats_residual",
            worst_margin > 0.0,
            format!("{specs} specs, smallest er_res − er_v1 = {worst_margin:.6e}"),
        ),
        Check::le("theory/thr_v1_plug_ins_exact", plug, 0.0),
        Check::le("theory/threshold_chain_roots", chain, 1e-9),
        Check::flag("theory/equal_param_exhaustive_search", table_ok, ""),
        Check::flag("theory/lemma2_real_rank_bound", lemma_ok, ""),
    ])
}

/// Gains fall with `r_star` in each dimension and `d = 500` dominates
/// `d = 100` pointwise.
pub fn figure4_checks() -> Result<Vec<Check>> {
    let grid = Figure4Grid::rank_panel();
    let rows = figure4_sweep(&grid)?;
    let (small, large) = rows.split_at(grid.r_stars.len());
    let monotone = [small, large]
        .iter()
        .all(|p| p.windows(2).all(|w| w[1].g1_lb < w[0].g1_lb && w[1].g2_lb < w[0].g2_lb));
    let dominates = small
        .iter()
        .zip(large)
        .all(|(s, l)| l.g1_lb > s.g1_lb && l.g2_lb > s.g2_lb);
    Ok(vec![
        Check::flag("theory/figure4_gains_decrease_in_rank", monotone, "κ = 0.5, λmax = 10"),
        Check::flag("theory/figure4_larger_d_dominates", dominates, "d = 500 over d = 100"),
    ])
}

// ---------------------------------------------------------------- stein

/// Adjudicates the scalar Stein moment for each dimension in `dims`.
/// Returns the agreed constant when every dimension selects the same one.
pub fn stein_checks(
    dims: &[usize],
    samples: usize,
    seed: u64,
) -> Result<(Vec<Check>, Vec<SteinAdjudication>, Option<SteinConstant>)> {
    let adj: Vec<SteinAdjudication> = dims
        .iter()
        .map(|&d| adjudicate_stein(d, samples, seed.wrapping_add(d as u64)))
        .collect::<Result<_>>()?;
    let mut checks = Vec::new();
    for a in &adj {
        checks.push(
            Check::le(format!("stein/matrix_moment_d{}", a.d), a.matrix_max_z, 3.0)
                .detail(format!("{} samples, max |z| over entries", a.samples)),
        );
        checks.push(Check::flag(
            format!("stein/scalar_constant_selected_d{}", a.d),
            a.selected.is_some(),
            format!(
                "mean {:.6} ± {:.2e}; (d+1)/2 z = {:.2}, (d+2)/2 z = {:.2}",
                a.scalar.mean, a.scalar.se, a.z_printed, a.z_corrected
            ),
        ));
    }
    let first = adj.first().and_then(|a| a.selected);
    let agreed = first.filter(|c| adj.iter().all(|a| a.selected == Some(*c)));
    checks.push(Check::flag(
        "stein/constant_consistent_across_d",
        agreed.is_some(),
        format!("{agreed:?}"),
    ));
    Ok((checks, adj, agreed))
}

// ---------------------------------------------------------- equivalence

pub fn small_lm(arch: Arch, k: Option<usize>) -> LmConfig {
    LmConfig {
        arch,
        vocab: 13,
        d: 8,
        heads: 2,
        blocks: 3,
        max_seq: 6,
        k,
        init_std: 0.3,
        shared_qkv_norm: true,
    }
}

pub fn random_batch(vocab: usize, seqs: usize, len: usize, rng: &mut Rng) -> Result<Batch> {
    let s: Vec<Vec<usize>> = (0..seqs)
        .map(|_| (0..len).map(|_| rng.below(vocab as u64) as usize).collect())
        .collect();
    Batch::new(&s)
}

/// Overwrites every combination weight with Gaussian noise around 1 (for
/// `b`) and 0 (for `w`), drawn in store order from `seed`.
pub fn randomize_grn(model: &mut LmModel, seed: u64) -> Result<()> {
    let mut rng = Rng::new(seed);
    let ids: Vec<_> = model
        .store
        .iter()
        .filter(|(_, n, _)| n.contains("grn"))
        .map(|(id, _, t)| (id, t.shape().to_vec()))
        .collect();
    for (id, shape) in ids {
        let name = model.store.name(id).to_string();
        let noise = Tensor::randn(&shape, 0.5, &mut rng);
        let v = if name.ends_with(".b") { noise.map(|x| x + 1.0) } else { noise };
        model.store.set(id, v)?;
    }
    Ok(())
}

fn logits_gap(a: &LmModel, b: &LmModel, batch: &Batch) -> Result<f64> {
    a.eval_logits(batch)?.max_abs_diff(&b.eval_logits(batch)?)
}

/// DCA at initialisation and after retrofit against the transformer, and
/// stack truncation against the full stack.
pub fn equivalence_checks(seeds: std::ops::Range<u64>) -> Result<Vec<Check>> {
    let per_seed: Vec<(f64, f64, f64, f64)> = seeds
        .clone()
        .into_par_iter()
        .map(|seed| {
            let mut rng = Rng::new(seed).split(1);
            let batch = random_batch(13, 2, 6, &mut rng)?;
            let base = LmModel::new(small_lm(Arch::Transformer, None), &mut Rng::new(seed))?;
            let dca = LmModel::new(small_lm(Arch::Dca, None), &mut Rng::new(seed))?;
            let init = logits_gap(&base, &dca, &batch)?;
            let wrapped = retrofit(&base, None)?;
            let retro = logits_gap(&base, &wrapped, &batch)?;

            let mut full = LmModel::new(small_lm(Arch::Dca, None), &mut Rng::new(seed))?;
            let mut wide = LmModel::new(small_lm(Arch::Dca, Some(3 + (seed % 3) as usize)), &mut Rng::new(seed))?;
            randomize_grn(&mut full, seed ^ 0xabc)?;
            randomize_grn(&mut wide, seed ^ 0xabc)?;
            let k_wide = logits_gap(&full, &wide, &batch)?;

            let narrow = LmModel::new(small_lm(Arch::Dca, Some((seed % 2) as usize)), &mut Rng::new(seed))?;
            let ones = logits_gap(&dca, &narrow, &batch)?;
            Ok((init, retro, k_wide, ones))
        })
        .collect::<Result<_>>()?;
    let worst = |f: fn(&(f64, f64, f64, f64)) -> f64| per_seed.iter().map(f).fold(0.0, f64::max);
    let n = format!("{} seeds", seeds.end - seeds.start);
    Ok(vec![
        Check::le("equivalence/dca_init_matches_transformer", worst(|r| r.0), 1e-10).detail(n.clone()),
        Check::le("equivalence/retrofit_matches_transformer", worst(|r| r.1), 1e-10).detail(n.clone()),
        Check::le("equivalence/k_at_least_depth_matches_full", worst(|r| r.2), 1e-12).detail(n.clone()),
        Check::le("equivalence/first_last_k_all_ones_exact", worst(|r| r.3), 0.0).detail(n),
    ])
}

// --------------------------------------------------------------- driver

fn run_suite(suite: Suite, params: &VerifyParams, seed: u64) -> Result<(SuiteReport, Vec<SteinAdjudication>, Option<SteinConstant>)> {
    let mut stein = Vec::new();
    let mut constant = None;
    let checks = match suite {
        Suite::Grads => grad_checks(seed..seed + 10, params.grad_fault)?,
        Suite::Theory => {
            let mut c = theory_exactness(100, seed)?;
            c.extend(theory_tradeoff(50, seed)?);
            c.extend(figure4_checks()?);
            c
        }
        Suite::Stein => {
            let (c, adj, agreed) = stein_checks(&STEIN_DIMS, params.stein_samples, seed)?;
            stein = adj;
            constant = agreed;
            c
        }
        Suite::Equivalence => equivalence_checks(seed..seed + 20)?,
        Suite::All => unreachable!("expanded before dispatch"),
    };
    let passed = checks.iter().all(|c| c.passed);
    Ok((SuiteReport { suite, passed, checks }, stein, constant))
}

/// Runs the requested suites. Failed checks are report content; `Err`
/// means a check could not be evaluated at all.
pub fn run_verify(params: &VerifyParams, seed: u64) -> Result<VerifyReport> {
    let suites = params.suite.expand();
    let results: Vec<_> = suites
        .par_iter()
        .map(|&s| run_suite(s, params, seed))
        .collect::<Result<_>>()?;
    let mut report = VerifyReport {
        seed,
        passed: true,
        stein_constant: None,
        stein: Vec::new(),
        suites: Vec::new(),
    };
    for (suite, stein, constant) in results {
        report.passed &= suite.passed;
        report.suites.push(suite);
        report.stein.extend(stein);
        report.stein_constant = report.stein_constant.or(constant);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_passes_and_fault_is_caught() {
        let ok = grad_checks(0..2, 0.0).unwrap();
        assert!(ok.iter().all(|c| c.passed), "{ok:#?}");
        let bad = grad_checks(0..1, 1e-3).unwrap();
        assert!(bad.iter().all(|c| !c.passed));
    }

    #[test]
    fn suite_names_parse() {
        for (s, v) in [("all", Suite::All), ("stein", Suite::Stein), ("equivalence", Suite::Equivalence)] {
            assert_eq!(s.parse::<Suite>().unwrap(), v);
        }
        assert!("everything".parse::<Suite>().is_err());
    }

    #[test]
    fn equivalence_suite_passes() {
        let checks = equivalence_checks(0..3).unwrap();
        assert!(checks.iter().all(|c| c.passed), "{checks:#?}");
    }

    #[test]
    fn stein_report_records_constant() {
        let params = VerifyParams {
            suite: Suite::Stein,
            stein_samples: 200_000,
            grad_fault: 0.0,
        };
        let r = run_verify(&params, 1).unwrap();
        assert_eq!(r.stein_constant, Some(SteinConstant::Corrected));
        assert_eq!(r.stein.len(), 3);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"stein_constant\":\"corrected\""));
    }
}
