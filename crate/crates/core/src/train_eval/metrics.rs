use s4m_autodiff::{Tape, Tensor, Var};

use crate::error::{Error, Result};

/// `Σ mask∘(pred − target)² / max(1, Σ mask)`; with `masking` off every
/// entry counts. Returns the loss and whether the mask was empty.
pub fn masked_mse_loss(pred: &[f64], target: &[f64], mask: &[f64], masking: bool) -> Result<(f64, bool)> {
    if pred.len() != target.len() || pred.len() != mask.len() {
        return Err(Error::Contract(format!(
            "prediction {} vs target {} vs mask {}",
            pred.len(),
            target.len(),
            mask.len()
        )));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..pred.len() {
        let w = if masking { mask[i] } else { 1.0 };
        if w != 0.0 {
            let e = pred[i] - target[i];
            num += w * e * e;
            den += w;
        }
    }
    Ok((num / den.max(1.0), den == 0.0))
}

/// Tape version of [`masked_mse_loss`]. Target entries under a zero weight
/// never enter the graph's numbers because the caller zeroes them.
pub fn masked_mse_var(tape: &mut Tape, pred: Var, target: &Tensor, mask: &Tensor, masking: bool) -> Result<(Var, bool)> {
    let shape = tape.shape(pred).to_vec();
    if target.shape() != shape.as_slice() || mask.shape() != shape.as_slice() {
        return Err(Error::Contract(format!(
            "prediction {shape:?} vs target {:?} vs mask {:?}",
            target.shape(),
            mask.shape()
        )));
    }
    let w = if masking { mask.clone() } else { Tensor::ones(&shape) };
    let den = w.sum();
    let t = tape.constant(target.clone());
    let wv = tape.constant(w);
    let diff = tape.sub(pred, t)?;
    let sq = tape.mul(diff, diff)?;
    let sq = tape.mul(sq, wv)?;
    let total = tape.sum_all(sq)?;
    Ok((tape.scale(total, 1.0 / den.max(1.0))?, den == 0.0))
}

/// Mean absolute and mean squared error over all entries.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ErrorMetrics {
    pub mae: f64,
    pub mse: f64,
}

pub fn metrics(pred: &[f64], truth: &[f64]) -> Result<ErrorMetrics> {
    if pred.len() != truth.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} targets",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Ok(ErrorMetrics::default());
    }
    let n = pred.len() as f64;
    let (mut a, mut s) = (0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let e = p - t;
        a += e.abs();
        s += e * e;
    }
    Ok(ErrorMetrics { mae: a / n, mse: s / n })
}

/// Errors restricted to entries with a nonzero mask.
pub fn observed_metrics(pred: &[f64], target: &[f64], mask: &[f64]) -> Result<ErrorMetrics> {
    let (p, t): (Vec<f64>, Vec<f64>) = pred
        .iter()
        .zip(target)
        .zip(mask)
        .filter(|(_, &m)| m != 0.0)
        .map(|((p, t), _)| (*p, *t))
        .unzip();
    metrics(&p, &t)
}
