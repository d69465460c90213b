//! Series frames, CSV I/O, synthetic generation, block-missing corruption,
//! splitting, windowing and normalization.

mod csv_io;
mod missing;
mod synth;

use crate::error::{Error, Result};

pub use csv_io::{load_csv, read_csv, save_csv, write_csv};
pub use missing::{
    inject_missing, inject_time_point_missing, inject_variable_missing, CorruptionManifest,
    MissingPattern,
};
pub use synth::{synth_generate, Component, SynthSpec, VariableSpec};

/// `T × D` values with an observation mask (row-major).
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesFrame {
    pub names: Vec<String>,
    pub granularity: String,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl TimeSeriesFrame {
    /// Fully observed frame.
    pub fn new(names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let mask = vec![true; values.len()];
        Self::with_mask(names, values, mask)
    }

    pub fn with_mask(names: Vec<String>, values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        let d = names.len();
        if d == 0 || values.len() % d != 0 || mask.len() != values.len() {
            return Err(Error::Data(format!(
                "{} values and {} mask entries do not form rows of {d} variables",
                values.len(),
                mask.len()
            )));
        }
        if let Some(i) = (0..values.len()).find(|&i| mask[i] && !values[i].is_finite()) {
            return Err(Error::Data(format!(
                "observed value at row {}, variable {} is not finite",
                i / d,
                i % d
            )));
        }
        Ok(Self {
            names,
            granularity: "step".into(),
            values,
            mask,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dims()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.names.len()
    }

    pub fn value(&self, t: usize, v: usize) -> f64 {
        self.values[t * self.dims() + v]
    }

    pub fn observed(&self, t: usize, v: usize) -> bool {
        self.mask[t * self.dims() + v]
    }

    pub fn mask_f64(&self) -> Vec<f64> {
        self.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect()
    }

    /// Rows `start..start + len`.
    pub fn rows(&self, start: usize, len: usize) -> Self {
        let d = self.dims();
        Self {
            names: self.names.clone(),
            granularity: self.granularity.clone(),
            values: self.values[start * d..(start + len) * d].to_vec(),
            mask: self.mask[start * d..(start + len) * d].to_vec(),
        }
    }

    /// Appends `other`'s rows.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.names != other.names {
            return Err(Error::Data("cannot join frames with different variables".into()));
        }
        let mut out = self.clone();
        out.values.extend_from_slice(&other.values);
        out.mask.extend_from_slice(&other.mask);
        Ok(out)
    }

    /// Per-variable mean of observed entries (`None` where nothing is observed).
    pub fn observed_means(&self) -> Vec<Option<f64>> {
        let d = self.dims();
        let mut sum = vec![0.0; d];
        let mut n = vec![0usize; d];
        for (i, (&x, &m)) in self.values.iter().zip(&self.mask).enumerate() {
            if m {
                sum[i % d] += x;
                n[i % d] += 1;
            }
        }
        sum.iter()
            .zip(&n)
            .map(|(s, &c)| (c > 0).then(|| s / c as f64))
            .collect()
    }
}

/// Fraction of unobserved entries.
pub fn overall_missing_ratio(frame: &TimeSeriesFrame) -> f64 {
    if frame.mask.is_empty() {
        return 0.0;
    }
    frame.mask.iter().filter(|&&m| !m).count() as f64 / frame.mask.len() as f64
}

/// Contiguous train/validation/test partitions. Train and validation lengths
/// are `⌊ratio·T⌋`; the test split takes the remainder.
pub fn chronological_split(
    frame: &TimeSeriesFrame,
    ratios: [f64; 3],
) -> Result<(TimeSeriesFrame, TimeSeriesFrame, TimeSeriesFrame)> {
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 || ratios.iter().any(|&r| r < 0.0) {
        return Err(Error::Config(format!(
            "split ratios {ratios:?} must be nonnegative and sum to 1"
        )));
    }
    let t = frame.len();
    let n_train = ((ratios[0] * t as f64) + 1e-9).floor() as usize;
    let n_val = (((ratios[1] * t as f64) + 1e-9).floor() as usize).min(t - n_train);
    let n_test = t - n_train - n_val;
    Ok((
        frame.rows(0, n_train),
        frame.rows(n_train, n_val),
        frame.rows(n_train + n_val, n_test),
    ))
}

/// A look-back window and the horizon that follows it.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowPair {
    pub start: usize,
    pub lookback: TimeSeriesFrame,
    pub horizon: TimeSeriesFrame,
}

/// Sliding windows at `stride`; `⌊(T − ℓ_L − ℓ_H)/stride⌋ + 1` of them.
pub fn make_windows(
    frame: &TimeSeriesFrame,
    lookback: usize,
    horizon: usize,
    stride: usize,
) -> Result<Vec<WindowPair>> {
    let t = frame.len();
    if lookback == 0 || horizon == 0 || stride == 0 {
        return Err(Error::Config("window lengths and stride must be positive".into()));
    }
    if lookback + horizon > t {
        return Err(Error::Config(format!(
            "look-back {lookback} plus horizon {horizon} exceeds the {t} available steps"
        )));
    }
    Ok((0..=(t - lookback - horizon) / stride)
        .map(|i| {
            let s = i * stride;
            WindowPair {
                start: s,
                lookback: frame.rows(s, lookback),
                horizon: frame.rows(s + lookback, horizon),
            }
        })
        .collect())
}

/// Per-variable z-score statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-8;

impl NormStats {
    /// Mean and population standard deviation of observed entries. A variable
    /// with nothing observed gets mean 0 and unit scale.
    pub fn fit(train: &TimeSeriesFrame) -> Self {
        let d = train.dims();
        let means = train.observed_means();
        let mut ss = vec![0.0; d];
        let mut n = vec![0usize; d];
        for (i, (&x, &m)) in train.values.iter().zip(&train.mask).enumerate() {
            if m {
                let v = i % d;
                let dev = x - means[v].unwrap_or(0.0);
                ss[v] += dev * dev;
                n[v] += 1;
            }
        }
        Self {
            mean: means.iter().map(|m| m.unwrap_or(0.0)).collect(),
            std: ss
                .iter()
                .zip(&n)
                .map(|(s, &c)| if c > 0 { (s / c as f64).sqrt().max(STD_FLOOR) } else { 1.0 })
                .collect(),
        }
    }

    /// Scales observed entries; hidden entries are carried through unchanged.
    pub fn normalize(&self, frame: &TimeSeriesFrame) -> TimeSeriesFrame {
        let d = frame.dims();
        let mut out = frame.clone();
        for (i, x) in out.values.iter_mut().enumerate() {
            if frame.mask[i] {
                *x = (*x - self.mean[i % d]) / self.std[i % d];
            }
        }
        out
    }

    pub fn denormalize(&self, frame: &TimeSeriesFrame) -> TimeSeriesFrame {
        let d = frame.dims();
        let mut out = frame.clone();
        for (i, x) in out.values.iter_mut().enumerate() {
            if frame.mask[i] {
                *x = *x * self.std[i % d] + self.mean[i % d];
            }
        }
        out
    }
}

/// Normalizes `train` and every frame in `others` with statistics fitted on
/// the observed training entries.
pub fn normalize(
    train: &TimeSeriesFrame,
    others: &[&TimeSeriesFrame],
) -> (TimeSeriesFrame, Vec<TimeSeriesFrame>, NormStats) {
    let stats = NormStats::fit(train);
    (
        stats.normalize(train),
        others.iter().map(|f| stats.normalize(f)).collect(),
        stats,
    )
}
