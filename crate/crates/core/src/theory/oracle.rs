//! Independent numerical checks for the closed forms in this module:
//! Monte-Carlo expectations, brute-force parameter budgets, bisection on
//! raw inequality chains and an eigenvalue route to Eckart–Young.
//!
//! Nothing in the formula code depends on this file.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grn::GrnVariant;
use crate::linalg::{eigh, haar_orthogonal, matmul, matmul_tn};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::SteinConstant;

/// Samples per parallel work unit; each chunk draws from its own split
/// stream, so results do not depend on the thread count.
const CHUNK: usize = 10_000;
pub const MIN_STEIN_SAMPLES: usize = 10_000;
/// Acceptance band for Monte-Carlo comparisons, in standard errors.
pub const SE_BAND: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
}

impl McEstimate {
    fn from_sums(sum: f64, sum_sq: f64, n: usize) -> Self {
        let nf = n as f64;
        let mean = sum / nf;
        let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
        McEstimate {
            mean,
            se: (var / nf).sqrt(),
        }
    }

    /// `|mean − value| / se`; infinite when `se = 0` and the values differ.
    pub fn z(&self, value: f64) -> f64 {
        let gap = (self.mean - value).abs();
        if gap == 0.0 {
            0.0
        } else {
            gap / self.se
        }
    }
}

/// `I + QΛQᵀ` with `Q` Haar-orthogonal and `Λ` uniform on
/// `[λmin, λmax]`, so `A − I` is PSD with spectrum in that interval.
/// Returns the target and `Λ` in draw order.
pub fn random_psd_target(d: usize, lambda_min: f64, lambda_max: f64, rng: &mut Rng) -> (Tensor, Vec<f64>) {
    let q = haar_orthogonal(d, rng);
    let lambda = rng.uniforms(d, lambda_min, lambda_max);
    let ql = Tensor::from_fn(d, d, |i, j| q.get(i, j) * lambda[j]);
    let m = matmul(&ql, &q.transpose().expect("matrix")).expect("square");
    let a = m.symmetrize().expect("square").add(&Tensor::eye(d)).expect("square");
    (a, lambda)
}

/// `Σ_{i>r} σ_i²` of `A − I`, with `σ_i²` taken from the eigenvalues of
/// `(A − I)ᵀ(A − I)` rather than from an SVD.
pub fn eckart_young_tail(target: &Tensor, r: usize) -> Result<f64> {
    let c = target.sub(&Tensor::eye(target.rows()))?;
    let gram = matmul_tn(&c, &c)?.symmetrize()?;
    let mut ev = eigh(&gram)?.values;
    ev.sort_by(|a, b| b.total_cmp(a));
    Ok(ev.iter().skip(r).map(|v| v.max(0.0)).sum())
}

fn chunked<T: Send>(n: usize, seed_rng: &Rng, f: impl Fn(usize, Rng) -> T + Sync) -> Vec<T> {
    let chunks = n.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = CHUNK.min(n - c * CHUNK);
            f(len, seed_rng.split(c as u64))
        })
        .collect()
}

/// `E‖(A − Â)x‖²` over `x ~ N(0, I)`.
pub fn mc_excess_risk(target: &Tensor, est: &Tensor, n: usize, rng: &Rng) -> Result<McEstimate> {
    if n < 2 {
        return Err(Error::InvalidArgument("Monte-Carlo needs at least 2 samples".into()));
    }
    let diff = target.sub(est)?;
    let d = diff.cols();
    let parts = chunked(n, rng, |len, mut r| {
        let (mut s, mut s2) = (0.0, 0.0);
        let mut x = vec![0.0; d];
        for _ in 0..len {
            for xi in x.iter_mut() {
                *xi = r.normal();
            }
            let v: f64 = (0..diff.rows())
                .map(|i| {
                    let y: f64 = diff.row(i).iter().zip(&x).map(|(a, b)| a * b).sum();
                    y * y
                })
                .sum();
            s += v;
            s2 += v * v;
        }
        (s, s2)
    });
    let (s, s2) = parts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    Ok(McEstimate::from_sums(s, s2, n))
}

/// Monte-Carlo estimates of `E[σ(wᵀx)²‖x‖²]` and `E[σ(wᵀx)xxᵀ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteinMc {
    pub scalar: McEstimate,
    pub matrix: Tensor,
    pub matrix_se: Tensor,
}

pub fn stein_moments_mc(w: &[f64], n: usize, seed: u64) -> Result<SteinMc> {
    if n < MIN_STEIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "stein_moments_mc needs n ≥ {MIN_STEIN_SAMPLES}, got {n}"
        )));
    }
    let d = w.len();
    let root = Rng::new(seed);
    let parts = chunked(n, &root, |len, mut r| {
        let (mut s, mut s2) = (0.0, 0.0);
        let mut m = vec![0.0; d * d];
        let mut m2 = vec![0.0; d * d];
        let mut x = vec![0.0; d];
        for _ in 0..len {
            for xi in x.iter_mut() {
                *xi = r.normal();
            }
            let a: f64 = w.iter().zip(&x).map(|(p, q)| p * q).sum::<f64>().max(0.0);
            if a == 0.0 {
                continue;
            }
            let norm2: f64 = x.iter().map(|v| v * v).sum();
            let v = a * a * norm2;
            s += v;
            s2 += v * v;
            for i in 0..d {
                for j in 0..d {
                    let e = a * x[i] * x[j];
                    m[i * d + j] += e;
                    m2[i * d + j] += e * e;
                }
            }
        }
        (s, s2, m, m2)
    });
    let (mut s, mut s2) = (0.0, 0.0);
    let mut m = vec![0.0; d * d];
    let mut m2 = vec![0.0; d * d];
    for (ps, ps2, pm, pm2) in parts {
        s += ps;
        s2 += ps2;
        for k in 0..d * d {
            m[k] += pm[k];
            m2[k] += pm2[k];
        }
    }
    let entries: Vec<McEstimate> = (0..d * d).map(|k| McEstimate::from_sums(m[k], m2[k], n)).collect();
    Ok(SteinMc {
        scalar: McEstimate::from_sums(s, s2, n),
        matrix: Tensor::matrix(d, d, entries.iter().map(|e| e.mean).collect())?,
        matrix_se: Tensor::matrix(d, d, entries.iter().map(|e| e.se).collect())?,
    })
}

/// `(‖w‖I + wwᵀ/‖w‖)/√(2π)`, zero at `w = 0`.
pub fn stein2_closed_form(w: &[f64]) -> Tensor {
    let d = w.len();
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Tensor::zeros(&[d, d]);
    }
    let c = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    Tensor::from_fn(d, d, |i, j| c * (if i == j { norm } else { 0.0 } + w[i] * w[j] / norm))
}

/// `‖w‖²·c/2` for the chosen constant.
pub fn stein1_closed_form(w: &[f64], constant: SteinConstant) -> f64 {
    let norm2: f64 = w.iter().map(|v| v * v).sum();
    norm2 * constant.factor(w.len()) / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteinAdjudication {
    pub d: usize,
    pub samples: usize,
    pub scalar: McEstimate,
    pub printed: f64,
    pub corrected: f64,
    pub z_printed: f64,
    pub z_corrected: f64,
    /// The unique candidate within the band, if exactly one is.
    pub selected: Option<SteinConstant>,
    /// Largest per-entry z-score of the matrix moment against its closed form.
    pub matrix_max_z: f64,
    pub matrix_within_band: bool,
}

/// Runs [`stein_moments_mc`] at a unit `w` along the first axis and decides
/// which constant the samples support.
pub fn adjudicate_stein(d: usize, n: usize, seed: u64) -> Result<SteinAdjudication> {
    if d == 0 {
        return Err(Error::InvalidArgument("d must be positive".into()));
    }
    let mut w = vec![0.0; d];
    w[0] = 1.0;
    let mc = stein_moments_mc(&w, n, seed)?;
    let printed = stein1_closed_form(&w, SteinConstant::Printed);
    let corrected = stein1_closed_form(&w, SteinConstant::Corrected);
    let z_printed = mc.scalar.z(printed);
    let z_corrected = mc.scalar.z(corrected);
    let selected = match (z_printed <= SE_BAND, z_corrected <= SE_BAND) {
        (true, false) => Some(SteinConstant::Printed),
        (false, true) => Some(SteinConstant::Corrected),
        _ => None,
    };
    let closed = stein2_closed_form(&w);
    let matrix_max_z = (0..d * d)
        .map(|k| {
            McEstimate {
                mean: mc.matrix.data()[k],
                se: mc.matrix_se.data()[k],
            }
            .z(closed.data()[k])
        })
        .fold(0.0, f64::max);
    Ok(SteinAdjudication {
        d,
        samples: n,
        scalar: mc.scalar,
        printed,
        corrected,
        z_printed,
        z_corrected,
        selected,
        matrix_max_z,
        matrix_within_band: matrix_max_z <= SE_BAND,
    })
}

/// Per feasible depth `T′`, the largest integer `r′ ≥ T′` whose parameter
/// count fits the residual budget, by enumerating every `(T′, r′)` pair.
/// Inequalities are scaled by 4 to stay in integers.
pub fn exhaustive_equal_param(variant: GrnVariant, d: usize, r_star: usize) -> Vec<(usize, usize)> {
    let fits = |t: usize, r: usize| -> bool {
        match variant {
            GrnVariant::V1 => 4 * d * r + t * (t - 1) <= 4 * d * r_star,
            GrnVariant::V2 => 4 * r + t * (t - 1) <= 4 * r_star,
            GrnVariant::V3 => 4 * r + t * (t + 1) <= 4 * r_star,
        }
    };
    let mut out = Vec::new();
    for t in 1..=2 * r_star + 2 {
        if let Some(r) = (t..=r_star).rev().find(|&r| fits(t, r)) {
            out.push((t, r));
        }
    }
    out
}

/// Largest `r` satisfying `r ≤ d·c² + (1 − c²)·(r − g(r)²)`, where `c` is
/// `κ` (V1, V2) or `η` (V3) and `g` is the Lemma-2 gap
/// `√(d+r) − √d`, `√(1+r) − 1` or `√(1.6+r) − 1`. Found by bisection on
/// the raw inequality, whose slack is decreasing in `r`.
/// For V1 the result is divided by `d` to match the `r/d` threshold.
pub fn threshold_chain_root(variant: GrnVariant, c: f64, d: usize) -> f64 {
    let df = d as f64;
    let gap = |r: f64| -> f64 {
        match variant {
            GrnVariant::V1 => (df + r).sqrt() - df.sqrt(),
            GrnVariant::V2 => (1.0 + r).sqrt() - 1.0,
            GrnVariant::V3 => (1.6 + r).sqrt() - 1.0,
        }
    };
    let slack = |r: f64| df * c * c + (1.0 - c * c) * (r - gap(r).powi(2)) - r;
    // slack is nonnegative at the left end of each domain: dc² at 0, and
    // (d + 0.6)c² at −0.6 where the V3 gap vanishes
    let mut lo = if variant == GrnVariant::V3 { -0.6 } else { 0.0 };
    let mut hi = 1.0;
    while slack(hi) >= 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return f64::INFINITY;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if slack(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    match variant {
        GrnVariant::V1 => lo / df,
        _ => lo,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_target_has_requested_spectrum() {
        let (a, lambda) = random_psd_target(6, 2.0, 5.0, &mut Rng::new(1));
        let mut ev = eigh(&a.sub(&Tensor::eye(6)).unwrap()).unwrap().values;
        let mut want = lambda.clone();
        ev.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        for (x, y) in ev.iter().zip(&want) {
            assert!((x - y).abs() < 1e-10);
        }
        assert!(want.iter().all(|&l| (2.0..=5.0).contains(&l)));
    }

    #[test]
    fn stein_needs_enough_samples_and_vanishes_at_zero() {
        assert!(stein_moments_mc(&[1.0], 9_999, 0).is_err());
        let mc = stein_moments_mc(&[0.0, 0.0], 10_000, 0).unwrap();
        assert_eq!(mc.scalar.mean, 0.0);
        assert_eq!(mc.matrix, Tensor::zeros(&[2, 2]));
        assert_eq!(stein2_closed_form(&[0.0, 0.0]), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn stein2_one_dimensional_value() {
        // E[relu(x)·x²] = E|x|³/2 = √(2/π)
        let c = stein2_closed_form(&[1.0]);
        assert!((c.item().unwrap() - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-15);
        let mc = stein_moments_mc(&[1.0], 200_000, 3).unwrap();
        let est = McEstimate {
            mean: mc.matrix.item().unwrap(),
            se: mc.matrix_se.item().unwrap(),
        };
        assert!(est.z(c.item().unwrap()) <= SE_BAND);
    }

    #[test]
    fn mc_risk_is_thread_count_independent() {
        let a = Tensor::randn(&[3, 3], 1.0, &mut Rng::new(5));
        let e = Tensor::eye(3);
        let r1 = mc_excess_risk(&a, &e, 25_000, &Rng::new(6)).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let r2 = pool.install(|| mc_excess_risk(&a, &e, 25_000, &Rng::new(6)).unwrap());
        assert_eq!(r1, r2);
    }

    #[test]
    fn exhaustive_budget_small_case() {
        // d = 10, r* = 3: T′ = 1 → 3; T′ = 2 → 2dr′ + 1 ≤ 60 → r′ = 2;
        // T′ = 3 → 20r′ + 3 ≤ 60 → r′ = 2 < T′, infeasible
        assert_eq!(exhaustive_equal_param(GrnVariant::V1, 10, 3), vec![(1, 3), (2, 2)]);
    }

    #[test]
    fn chain_root_at_unit_condition() {
        assert!((threshold_chain_root(GrnVariant::V1, 1.0, 50) - 1.0).abs() < 1e-9);
        assert!((threshold_chain_root(GrnVariant::V2, 1.0, 50) - 50.0).abs() < 1e-9);
    }
}
