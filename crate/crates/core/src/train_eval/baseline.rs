use crate::data::TimeSeriesFrame;
use crate::error::Result;
use crate::train_eval::Method;

/// Fills unobserved entries and marks everything observed.
///
/// * `Mean`: the per-variable training mean.
/// * `Ffill`: the last observed value, or the mean before the first one.
/// * `Decay`: `w·last + (1 − w)·mean` with `w = exp(−δ/λ)`, `δ` steps since
///   the last observation; the mean before the first one.
pub fn baseline_impute(
    frame: &TimeSeriesFrame,
    method: Method,
    means: &[f64],
    lambda: f64,
) -> Result<TimeSeriesFrame> {
    if method == Method::S4m {
        return Err(crate::Error::Config(
            "s4m is not an imputation method".into(),
        ));
    }
    let d = frame.dims();
    let mut out = frame.clone();
    for v in 0..d {
        let mut last: Option<(f64, usize)> = None;
        for t in 0..frame.len() {
            let i = t * d + v;
            if frame.mask[i] {
                last = Some((frame.values[i], t));
                continue;
            }
            out.values[i] = match (method, last) {
                (Method::Mean, _) | (_, None) => means[v],
                (Method::Ffill, Some((x, _))) => x,
                (Method::Decay, Some((x, at))) => {
                    let w = (-((t - at) as f64) / lambda).exp();
                    w * x + (1.0 - w) * means[v]
                }
                (Method::S4m, _) => unreachable!(),
            };
        }
    }
    out.mask.iter_mut().for_each(|m| *m = true);
    Ok(out)
}
