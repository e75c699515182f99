//! Sufficient conditions, gain lower bounds and rank reductions for GRNs
//! against a residual model with the same parameter count.
//!
//! Terms of the form `√(a + r) − √a` are evaluated as `r / (√(a + r) + √a)`
//! throughout; the subtraction form loses the plug-in identities such as
//! `thr_v1(κ = 1) = 1` to rounding.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grn::GrnVariant;

use super::{SpectrumSpec, SteinConstant};

const PI: f64 = std::f64::consts::PI;

/// `√(a + r) − √a` without cancellation.
fn root_gap(a: f64, r: f64) -> f64 {
    r / ((a + r).sqrt() + a.sqrt())
}

/// `(1 + x)² − 1 = x(2 + x)`.
fn square_excess(x: f64) -> f64 {
    x * (2.0 + x)
}

/// `η = √(((κ(1+ξ₀) − ξ₀)² + ξ₀)/(1 + ξ₀))` with `ξ₀ = 1/(π·c·(d − 1))`,
/// where `c = d + 1` for the printed constant. Rejects `d ≤ 1`.
pub fn eta(kappa: f64, d: usize, stein: SteinConstant) -> Result<f64> {
    if d <= 1 {
        return Err(Error::InvalidArgument(format!("η needs d ≥ 2, got d = {d}")));
    }
    let xi0 = 1.0 / (PI * stein.factor(d) * (d as f64 - 1.0));
    let a = kappa * (1.0 + xi0) - xi0;
    Ok(((a * a + xi0) / (1.0 + xi0)).sqrt())
}

/// `κ(√(κ² + c) − κ)` evaluated as `κc / (√(κ² + c) + κ)`.
fn shrink(k: f64, c: f64) -> f64 {
    k * c / ((k * k + c).sqrt() + k)
}

/// `(1 + κ(√(κ²+1) − κ))² − 1`, a bound on `r_star / d`.
pub fn thr_v1(kappa: f64) -> f64 {
    square_excess(shrink(kappa, 1.0))
}

/// `(1 + κ(√(κ²+d) − κ))² − 1`, a bound on `r_star`.
pub fn thr_v2(kappa: f64, d: usize) -> f64 {
    square_excess(shrink(kappa, d as f64))
}

/// `(1 + η(√(η²+d) − η))² − 1.6`, a bound on `r_star`.
pub fn thr_v3(eta: f64, d: usize) -> f64 {
    square_excess(shrink(eta, d as f64)) - 0.6
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thresholds {
    /// Bound on `r_star / d`.
    pub thr_v1: f64,
    /// Bound on `r_star`.
    pub thr_v2: f64,
    /// Bound on `r_star`.
    pub thr_v3: f64,
    pub eta: f64,
    pub v1_holds: bool,
    pub v2_holds: bool,
    pub v3_holds: bool,
}

pub fn thresholds(spec: &SpectrumSpec) -> Result<Thresholds> {
    thresholds_with(spec, SteinConstant::Printed)
}

pub fn thresholds_with(spec: &SpectrumSpec, stein: SteinConstant) -> Result<Thresholds> {
    spec.validate()?;
    let k = spec.kappa();
    let eta = eta(k, spec.d, stein)?;
    let thr_v1 = thr_v1(k);
    let thr_v2 = thr_v2(k, spec.d);
    let thr_v3 = thr_v3(eta, spec.d);
    let (r, d) = (spec.r_star as f64, spec.d as f64);
    Ok(Thresholds {
        thr_v1,
        thr_v2,
        thr_v3,
        eta,
        v1_holds: r / d <= thr_v1,
        v2_holds: r <= thr_v2,
        v3_holds: r <= thr_v3,
    })
}

/// Lower bounds on the excess-risk reduction over a residual model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Gains {
    pub g1_lb: f64,
    pub g2_lb: f64,
    pub g3_lb: f64,
}

pub fn gains(spec: &SpectrumSpec) -> Result<Gains> {
    gains_with(spec, SteinConstant::Printed)
}

pub fn gains_with(spec: &SpectrumSpec, stein: SteinConstant) -> Result<Gains> {
    spec.validate()?;
    let (d, r) = (spec.d as f64, spec.r_star as f64);
    let lo2 = spec.lambda_min * spec.lambda_min;
    let hi2 = spec.lambda_max * spec.lambda_max;
    let spread = hi2 - lo2;
    let c = PI * stein.factor(spec.d);
    Ok(Gains {
        g1_lb: (d - r) * lo2 - root_gap(d, r).powi(2) * spread,
        g2_lb: (d - r) * lo2 - root_gap(1.0, r).powi(2) * spread,
        // √(1.6 + r) − 1 = (0.6 + r)/(√(1.6 + r) + 1)
        g3_lb: (d - 1.0 / c - r) * lo2 + hi2 / (2.0 * c) - ((0.6 + r) / ((1.6 + r).sqrt() + 1.0)).powi(2) * spread,
    })
}

/// Collective ranks at which a GRN matches the residual model's risk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankReduction {
    /// `(r_star − dκ²)/(1 − κ²)`, for V1 and V2.
    pub r_prime: f64,
    /// `(r_star − dη²)/(1 − η²)`, for V3.
    pub r_tilde: f64,
}

pub fn rank_reduction(spec: &SpectrumSpec) -> Result<RankReduction> {
    rank_reduction_with(spec, SteinConstant::Printed)
}

pub fn rank_reduction_with(spec: &SpectrumSpec, stein: SteinConstant) -> Result<RankReduction> {
    spec.validate()?;
    let k = spec.kappa();
    if k >= 1.0 {
        return Err(Error::InvalidArgument(
            "rank reduction is undefined at κ = 1: the formula divides by 1 − κ²".into(),
        ));
    }
    let (d, r) = (spec.d as f64, spec.r_star as f64);
    let e = eta(k, spec.d, stein)?;
    Ok(RankReduction {
        r_prime: (r - d * k * k) / (1.0 - k * k),
        r_tilde: (r - d * e * e) / (1.0 - e * e),
    })
}

/// Closed-form lower bound on the equal-budget collective rank.
pub fn lemma2_lower_bound(variant: GrnVariant, d: usize, r_star: usize) -> f64 {
    let r = r_star as f64;
    let gap = match variant {
        GrnVariant::V1 => root_gap(d as f64, r),
        GrnVariant::V2 => root_gap(1.0, r),
        GrnVariant::V3 => (0.6 + r) / ((1.6 + r).sqrt() + 1.0),
    };
    r - gap * gap
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EqualParamRow {
    pub t_prime: usize,
    /// Largest real rank within budget at this depth.
    pub r_prime: f64,
    pub r_prime_int: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EqualParamRank {
    /// Every feasible depth `T′ = 1, 2, …` with `r′ ≥ T′`.
    pub table: Vec<EqualParamRow>,
    /// Minimum over `T′` of the real-valued `r′`; the quantity the closed
    /// form bounds from below.
    pub worst_real: f64,
    /// Minimum over `T′` of the integer `r′`.
    pub worst_int: usize,
    /// `r′` at `T′ = 1`.
    pub best_int: usize,
    pub lemma_bound: f64,
}

/// Largest collective rank `r′` a GRN of depth `T′` can afford within the
/// residual model's `2d·r_star` parameters, for every feasible `T′`.
///
/// Budgets, in units where one rank costs `2d` (V1) or `2` after dividing
/// by `d` (V2, V3): `2d·r′ + T′(T′−1)/2`, `2r′ + T′(T′−1)/2`,
/// `2r′ + T′(T′+1)/2`.
pub fn equal_param_rank(spec: &SpectrumSpec, variant: GrnVariant) -> Result<EqualParamRank> {
    spec.validate()?;
    let per_rank = match variant {
        GrnVariant::V1 => 2.0 * spec.d as f64,
        GrnVariant::V2 | GrnVariant::V3 => 2.0,
    };
    let extra = |t: usize| -> f64 {
        let t = t as f64;
        match variant {
            GrnVariant::V1 | GrnVariant::V2 => t * (t - 1.0) / 2.0,
            GrnVariant::V3 => t * (t + 1.0) / 2.0,
        }
    };
    let budget = per_rank * spec.r_star as f64;
    let mut table = Vec::new();
    for t in 1.. {
        let r = (budget - extra(t)) / per_rank;
        if r < t as f64 {
            break;
        }
        table.push(EqualParamRow {
            t_prime: t,
            r_prime: r,
            r_prime_int: r.floor() as usize,
        });
    }
    let Some(first) = table.first() else {
        return Err(Error::InvalidArgument(format!(
            "budget of r_star = {} admits no {:?} model with T′ ≥ 1 and r′ ≥ T′",
            spec.r_star, variant
        )));
    };
    let best_int = first.r_prime_int;
    let worst_real = table.iter().map(|row| row.r_prime).fold(f64::INFINITY, f64::min);
    let worst_int = table.iter().map(|row| row.r_prime_int).min().expect("nonempty");
    Ok(EqualParamRank {
        table,
        worst_real,
        worst_int,
        best_int,
        lemma_bound: lemma2_lower_bound(variant, spec.d, spec.r_star),
    })
}
