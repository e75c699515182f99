//! Central finite-difference gradient checks.
//!
//! A non-scalar output is reduced to `sum(out ⊙ R)` with a fixed random
//! projection `R`, so every output entry contributes to the checked
//! gradient. The error of one entry is `|a − n| / max(|a|, |n|, 1e-3)`.

use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::{Graph, Var};

pub const DEFAULT_STEP: f64 = 1e-5;
const DENOMINATOR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat element index)` of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

fn projected(
    f: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>,
    inputs: &[Tensor],
    proj_seed: u64,
) -> Result<(Graph, Vec<Var>, Var)> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let shape = g.value(out).shape().to_vec();
    let r = Tensor::rand_uniform(&shape, -1.0, 1.0, &mut Rng::new(proj_seed));
    let rv = g.constant(r);
    let prod = g.mul(out, rv)?;
    let loss = g.sum(prod);
    Ok((g, vars, loss))
}

/// Compares reverse-mode gradients of `f` with central differences of step
/// `h`. `fault` is added to every analytic entry and exists for negative
/// controls.
pub fn check_gradient(
    f: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>,
    inputs: &[Tensor],
    h: f64,
    fault: f64,
) -> Result<GradCheckReport> {
    let proj_seed = 0x5eed;
    let (g, vars, loss) = projected(f, inputs, proj_seed)?;
    let grads = g.backward(loss)?;
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let (g, _, loss) = projected(f, xs, proj_seed)?;
        Ok(g.value(loss).data()[0])
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut xs = inputs.to_vec();
    for (vi, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).cloned().unwrap_or_else(|| Tensor::zeros(inputs[vi].shape()));
        for k in 0..inputs[vi].len() {
            let orig = inputs[vi].data()[k];
            xs[vi].data_mut()[k] = orig + h;
            let plus = eval(&xs)?;
            xs[vi].data_mut()[k] = orig - h;
            let minus = eval(&xs)?;
            xs[vi].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[k] + fault;
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR);
            report.checked += 1;
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
                report.worst = (vi, k);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_correct_and_corrupted_gradients() {
        let x = Tensor::rand_uniform(&[3, 4], -1.0, 1.0, &mut Rng::new(1));
        let f = |g: &mut Graph, v: &[Var]| -> Result<Var> { g.mul(v[0], v[0]) };
        let ok = check_gradient(&f, &[x.clone()], DEFAULT_STEP, 0.0).unwrap();
        assert!(ok.max_rel_error < 1e-8, "{ok:?}");
        assert_eq!(ok.checked, 12);
        let bad = check_gradient(&f, &[x], DEFAULT_STEP, 1e-2).unwrap();
        assert!(bad.max_rel_error > 1e-5);
    }
}
