//! Closed-form excess-risk bounds, trade-off conditions and explicit
//! near-optimal constructions for low-rank linear residual models.
//!
//! Everything here is a pure formula. Numerical cross-checks live in
//! [`oracle`], which nothing else in this module imports.

mod bounds;
pub mod oracle;
mod sweep;
mod tradeoff;

pub use bounds::{
    bounds, bounds_with, construct_v1, construct_v2, excess_risk, BoundReport, Construction, V1Construction,
    V2Construction,
};
pub use sweep::{figure4_sweep, parse_csv, to_csv, Figure4Grid, SweepRow, CSV_HEADER};
pub use tradeoff::{
    equal_param_rank, eta, gains, gains_with, lemma2_lower_bound, rank_reduction, rank_reduction_with, thr_v1, thr_v2,
    thr_v3, thresholds, thresholds_with, EqualParamRank, EqualParamRow, Gains, RankReduction, Thresholds,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which constant to use for `E[σ(wᵀx)²‖x‖²] = ‖w‖²·c/2`.
///
/// The printed lemma gives `c = d + 1`; summing its own intermediate terms
/// gives `c = d + 2`. Every bound that inherits the constant goes through
/// [`SteinConstant::factor`], so the two are interchangeable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteinConstant {
    #[default]
    Printed,
    Corrected,
}

impl SteinConstant {
    /// `d + 1` or `d + 2`.
    pub fn factor(self, d: usize) -> f64 {
        match self {
            SteinConstant::Printed => d as f64 + 1.0,
            SteinConstant::Corrected => d as f64 + 2.0,
        }
    }
}

/// A class of PSD targets `A − I` with spectrum in `[λmin, λmax]`, matched
/// against a residual model of `t` layers and collective rank `r_star`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSpec {
    pub d: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub r_star: usize,
    pub t: usize,
}

impl SpectrumSpec {
    pub fn new(d: usize, lambda_min: f64, lambda_max: f64, r_star: usize, t: usize) -> Result<Self> {
        let s = SpectrumSpec {
            d,
            lambda_min,
            lambda_max,
            r_star,
            t,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_min.is_finite() && self.lambda_max.is_finite()) {
            return Err(Error::InvalidArgument("spectrum bounds must be finite".into()));
        }
        if !(self.lambda_min > 0.0 && self.lambda_min <= self.lambda_max) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < λmin ≤ λmax, got λmin = {}, λmax = {}",
                self.lambda_min, self.lambda_max
            )));
        }
        if self.r_star >= self.d {
            return Err(Error::InvalidArgument(format!(
                "collective rank {} must be below d = {}",
                self.r_star, self.d
            )));
        }
        if !(self.t >= 1 && self.t <= self.r_star) {
            return Err(Error::InvalidArgument(format!(
                "need 1 ≤ T ≤ r_star, got T = {}, r_star = {}",
                self.t, self.r_star
            )));
        }
        Ok(())
    }

    /// `λmin / λmax ∈ (0, 1]`.
    pub fn kappa(&self) -> f64 {
        self.lambda_min / self.lambda_max
    }
}
