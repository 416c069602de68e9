//! Central finite-difference checks for tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Denominator floor for relative errors; gradients smaller than this are
/// compared in absolute terms against it.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)` for every coordinate.
pub fn central_difference(point: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut x = point.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let hi = f(&x)?;
        x[i] = orig - eps;
        let lo = f(&x)?;
        x[i] = orig;
        out.push((hi - lo) / (2.0 * eps));
    }
    Ok(out)
}

/// Compares tape gradients of a scalar function of `point` against central
/// differences and returns the maximum relative error.
pub fn grad_check<F>(f: F, point: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |tensors: &[Tensor]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok((tape, vars, loss))
    };
    let (tape, vars, loss) = eval(point)?;
    let adj = tape.gradients(loss, 1.0)?;
    let mut worst: f64 = 0.0;
    for (ti, t) in point.iter().enumerate() {
        let analytic = adj[vars[ti].index()]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(t.shape()));
        let numeric = central_difference(t.data(), eps, |x| {
            let mut perturbed = point.to_vec();
            perturbed[ti] = Tensor::new(t.shape(), x.to_vec())?;
            let (tape, _, loss) = eval(&perturbed)?;
            Ok(tape.value(loss).data()[0])
        })?;
        worst = worst.max(max_relative_error(analytic.data(), &numeric));
    }
    Ok(worst)
}
