use crate::data::{chronological_split, make_windows, normalize, NormStats, TimeSeriesFrame};
use crate::error::{Error, Result};
use crate::train_eval::{baseline_impute, TrainConfig};

/// One normalized window, `L × D` input and `ℓ_H × D` targets, row-major.
/// Entries under a zero mask are stored as exactly 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub start: usize,
    pub x: Vec<f64>,
    pub m: Vec<f64>,
    pub y: Vec<f64>,
    pub ym: Vec<f64>,
    /// Clean horizon values when available, else `y`.
    pub truth: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedData {
    pub d: usize,
    pub stats: NormStats,
    /// Per-variable mean of the normalized observed training entries.
    pub train_means: Vec<f64>,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    /// Whether `truth` comes from a clean reference series.
    pub has_truth: bool,
}

pub const SPLIT: [f64; 3] = [0.7, 0.1, 0.2];

fn sanitized(frame: &TimeSeriesFrame) -> (Vec<f64>, Vec<f64>) {
    let m = frame.mask_f64();
    let x = frame
        .values
        .iter()
        .zip(&frame.mask)
        .map(|(&v, &o)| if o { v } else { 0.0 })
        .collect();
    (x, m)
}

fn windows(
    input: &TimeSeriesFrame,
    target: &TimeSeriesFrame,
    truth: Option<&TimeSeriesFrame>,
    cfg: &TrainConfig,
    stride: usize,
) -> Result<Vec<Sample>> {
    let ins = make_windows(input, cfg.lookback, cfg.horizon, stride)?;
    let tgs = make_windows(target, cfg.lookback, cfg.horizon, stride)?;
    let trs = truth
        .map(|t| make_windows(t, cfg.lookback, cfg.horizon, stride))
        .transpose()?;
    Ok(ins
        .iter()
        .zip(&tgs)
        .enumerate()
        .map(|(i, (a, b))| {
            let (x, m) = sanitized(&a.lookback);
            let (y, ym) = sanitized(&b.horizon);
            let truth = match &trs {
                Some(t) => t[i].horizon.values.clone(),
                None => y.clone(),
            };
            Sample { start: a.start, x, m, y, ym, truth }
        })
        .collect())
}

/// Splits 0.7/0.1/0.2, normalizes with observed training statistics, applies
/// the baseline imputation for baseline methods, and cuts windows.
/// `clean` is the uncorrupted series for ground-truth evaluation.
pub fn prepare(
    corrupted: &TimeSeriesFrame,
    clean: Option<&TimeSeriesFrame>,
    cfg: &TrainConfig,
) -> Result<PreparedData> {
    cfg.validate()?;
    if let Some(c) = clean {
        if c.len() != corrupted.len() || c.names != corrupted.names {
            return Err(Error::Data(
                "clean reference does not match the corrupted series".into(),
            ));
        }
    }
    let (tr, va, te) = chronological_split(corrupted, SPLIT)?;
    let (tr, rest, stats) = normalize(&tr, &[&va, &te]);
    let (va, te) = (&rest[0], &rest[1]);
    let clean_parts = clean
        .map(|c| -> Result<_> {
            let (a, b, c) = chronological_split(c, SPLIT)?;
            Ok((stats.normalize(&a), stats.normalize(&b), stats.normalize(&c)))
        })
        .transpose()?;
    let train_means: Vec<f64> = tr.observed_means().iter().map(|m| m.unwrap_or(0.0)).collect();

    let impute = |f: &TimeSeriesFrame| -> Result<TimeSeriesFrame> {
        if cfg.method.is_baseline() {
            baseline_impute(f, cfg.method, &train_means, cfg.decay_lambda)
        } else {
            Ok(f.clone())
        }
    };
    let build = |f: &TimeSeriesFrame, truth: Option<&TimeSeriesFrame>, stride| -> Result<Vec<Sample>> {
        windows(&impute(f)?, f, truth, cfg, stride)
    };
    let d = corrupted.dims();
    Ok(PreparedData {
        d,
        train: build(&tr, clean_parts.as_ref().map(|c| &c.0), cfg.train_stride)?,
        val: build(va, clean_parts.as_ref().map(|c| &c.1), cfg.eval_stride)?,
        test: build(te, clean_parts.as_ref().map(|c| &c.2), cfg.eval_stride)?,
        stats,
        train_means,
        has_truth: clean.is_some(),
    })
}

