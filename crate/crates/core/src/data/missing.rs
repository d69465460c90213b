use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::{overall_missing_ratio, TimeSeriesFrame};
use crate::error::{Error, Result};
use crate::rng::stage_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MissingPattern {
    /// Blocks hide every variable at once.
    TimePoint,
    /// Blocks are drawn independently per variable.
    Variable,
}

impl fmt::Display for MissingPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MissingPattern::TimePoint => "time-point",
            MissingPattern::Variable => "variable",
        })
    }
}

impl FromStr for MissingPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time-point" | "timepoint" | "time_point" => Ok(MissingPattern::TimePoint),
            "variable" => Ok(MissingPattern::Variable),
            other => Err(Error::Config(format!(
                "unknown missing pattern `{other}` (expected time-point or variable)"
            ))),
        }
    }
}

fn check_rate(r: f64, block_len: usize) -> Result<()> {
    if !(0.0..1.0).contains(&r) {
        return Err(Error::Config(format!("missing rate {r} outside [0, 1)")));
    }
    if block_len == 0 {
        return Err(Error::Config("block length must be positive".into()));
    }
    Ok(())
}

/// Draws `⌊rT⌋` anchors (uniform, with replacement) for the given columns and
/// hides `block_len` steps from each, truncated at the end of the series.
fn hide_blocks<R: Rng>(frame: &mut TimeSeriesFrame, cols: &[usize], r: f64, block_len: usize, rng: &mut R) {
    let (t_len, d) = (frame.len(), frame.dims());
    let anchors = (r * t_len as f64).floor() as usize;
    if t_len == 0 {
        return;
    }
    for _ in 0..anchors {
        let a = rng.random_range(0..t_len);
        for t in a..(a + block_len).min(t_len) {
            for &v in cols {
                frame.mask[t * d + v] = false;
            }
        }
    }
}

pub fn inject_time_point_missing(
    frame: &TimeSeriesFrame,
    r: f64,
    block_len: usize,
    seed: u64,
) -> Result<TimeSeriesFrame> {
    check_rate(r, block_len)?;
    let mut out = frame.clone();
    let mut rng = stage_rng(seed, "missing/time-point");
    let cols: Vec<usize> = (0..frame.dims()).collect();
    hide_blocks(&mut out, &cols, r, block_len, &mut rng);
    Ok(out)
}

pub fn inject_variable_missing(
    frame: &TimeSeriesFrame,
    r: f64,
    block_len: usize,
    seed: u64,
) -> Result<TimeSeriesFrame> {
    check_rate(r, block_len)?;
    let mut out = frame.clone();
    let mut rng = stage_rng(seed, "missing/variable");
    for v in 0..frame.dims() {
        hide_blocks(&mut out, &[v], r, block_len, &mut rng);
    }
    Ok(out)
}

pub fn inject_missing(
    frame: &TimeSeriesFrame,
    pattern: MissingPattern,
    r: f64,
    block_len: usize,
    seed: u64,
) -> Result<(TimeSeriesFrame, CorruptionManifest)> {
    let out = match pattern {
        MissingPattern::TimePoint => inject_time_point_missing(frame, r, block_len, seed)?,
        MissingPattern::Variable => inject_variable_missing(frame, r, block_len, seed)?,
    };
    let manifest = CorruptionManifest {
        seed,
        r,
        pattern,
        block_len,
        realized_ratio: overall_missing_ratio(&out),
    };
    Ok((out, manifest))
}

/// Record of one corruption run.
#[derive(Clone, Debug, PartialEq)]
pub struct CorruptionManifest {
    pub seed: u64,
    pub r: f64,
    pub pattern: MissingPattern,
    pub block_len: usize,
    pub realized_ratio: f64,
}

impl CorruptionManifest {
    pub fn to_text(&self) -> String {
        format!(
            "seed = {}\nr = {:?}\npattern = \"{}\"\nblock_len = {}\nrealized_ratio = {:?}\n",
            self.seed, self.r, self.pattern, self.block_len, self.realized_ratio
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut seed = None;
        let mut r = None;
        let mut pattern = None;
        let mut block_len = None;
        let mut ratio = None;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Data(format!("manifest line `{line}` lacks `=`")))?;
            let v = v.trim().trim_matches('"');
            let bad = || Error::Data(format!("manifest value `{v}` for `{}`", k.trim()));
            match k.trim() {
                "seed" => seed = Some(v.parse().map_err(|_| bad())?),
                "r" => r = Some(v.parse().map_err(|_| bad())?),
                "pattern" => pattern = Some(v.parse()?),
                "block_len" => block_len = Some(v.parse().map_err(|_| bad())?),
                "realized_ratio" => ratio = Some(v.parse().map_err(|_| bad())?),
                other => return Err(Error::Data(format!("unknown manifest key `{other}`"))),
            }
        }
        let missing = |k: &str| Error::Data(format!("manifest lacks `{k}`"));
        Ok(Self {
            seed: seed.ok_or_else(|| missing("seed"))?,
            r: r.ok_or_else(|| missing("r"))?,
            pattern: pattern.ok_or_else(|| missing("pattern"))?,
            block_len: block_len.ok_or_else(|| missing("block_len"))?,
            realized_ratio: ratio.ok_or_else(|| missing("realized_ratio"))?,
        })
    }
}
