//! Central finite differences as an independent gradient oracle.

use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Largest `|analytic − numeric| / max(1, |numeric|)` over the coordinates of
/// `theta`, where `numeric` is the central difference of `f` with `step`.
pub fn finite_difference_check(
    f: impl Fn(&Tensor) -> Result<f64>,
    theta: &Tensor,
    analytic: &Tensor,
    step: f64,
) -> Result<f64> {
    let numeric = numeric_gradient(f, theta, step)?;
    Ok(relative_error(analytic, &numeric))
}

pub fn numeric_gradient(
    f: impl Fn(&Tensor) -> Result<f64>,
    theta: &Tensor,
    step: f64,
) -> Result<Tensor> {
    let mut probe = theta.data().to_vec();
    let mut out = Vec::with_capacity(probe.len());
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let plus = f(&Tensor::new(theta.shape(), probe.clone())?)?;
        probe[i] = orig - step;
        let minus = f(&Tensor::new(theta.shape(), probe.clone())?)?;
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(TensorError::OracleFailure { coord: i });
        }
        out.push((plus - minus) / (2.0 * step));
    }
    Tensor::new(theta.shape(), out)
}

pub fn relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / n.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Builds the graph `build(tape, theta)` once for the analytic gradient and
/// again for every finite-difference probe; returns the max relative error.
pub fn check_gradient(
    build: impl Fn(&mut Tape, Var) -> Result<Var>,
    theta: &Tensor,
    step: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let x = tape.param(theta.clone());
    let loss = build(&mut tape, x)?;
    let analytic = tape.backward(loss)?.wrt(x);
    let eval = |t: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.constant(t.clone());
        let loss = build(&mut tape, x)?;
        Ok(tape.value(loss).item())
    };
    finite_difference_check(eval, theta, &analytic, step)
}
