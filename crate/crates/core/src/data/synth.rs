use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::TimeSeriesFrame;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub period: f64,
    pub amplitude: f64,
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariableSpec {
    pub components: Vec<Component>,
    /// Added per step.
    pub slope: f64,
    pub offset: f64,
}

/// `x_v(t) = Σ_j mix[v][j]·base_j(t) + ε`, with
/// `base_j(t) = offset_j + slope_j·t + Σ amplitude·sin(2πt/period + phase)`
/// and `ε ~ N(0, σ²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub variables: Vec<VariableSpec>,
    /// `D × D`, row-major.
    pub mix: Vec<f64>,
    pub sigma: f64,
}

impl SynthSpec {
    /// Seasonal defaults: each variable mixes a daily-like and a slower
    /// cycle, a gentle trend, and a little of its neighbour.
    pub fn seasonal(d: usize, sigma: f64) -> Self {
        let periods = [24.0, 48.0, 12.0, 36.0, 72.0, 18.0];
        let variables = (0..d)
            .map(|v| VariableSpec {
                components: vec![
                    Component {
                        period: periods[v % periods.len()],
                        amplitude: 1.0 + 0.25 * v as f64,
                        phase: 0.7 * v as f64,
                    },
                    Component {
                        period: 168.0 + 24.0 * v as f64,
                        amplitude: 0.5,
                        phase: 0.3 * v as f64,
                    },
                ],
                slope: 2e-4 * (v as f64 + 1.0),
                offset: v as f64,
            })
            .collect();
        let mut mix = vec![0.0; d * d];
        for v in 0..d {
            mix[v * d + v] = 1.0;
            if d > 1 {
                mix[v * d + (v + 1) % d] += 0.3;
            }
        }
        Self { variables, mix, sigma }
    }

    /// One pure sinusoid per variable, no trend, no mixing.
    pub fn sinusoid(d: usize, period: f64, amplitude: f64, sigma: f64) -> Self {
        let variables = (0..d)
            .map(|_| VariableSpec {
                components: vec![Component {
                    period,
                    amplitude,
                    phase: 0.0,
                }],
                slope: 0.0,
                offset: 0.0,
            })
            .collect();
        let mut mix = vec![0.0; d * d];
        for v in 0..d {
            mix[v * d + v] = 1.0;
        }
        Self { variables, mix, sigma }
    }

    pub fn dims(&self) -> usize {
        self.variables.len()
    }
}

pub fn synth_generate(t_len: usize, seed: u64, spec: &SynthSpec) -> Result<TimeSeriesFrame> {
    let d = spec.dims();
    if d == 0 || spec.mix.len() != d * d {
        return Err(Error::Config(format!(
            "synthetic spec has {d} variables and a mixing matrix of {} entries",
            spec.mix.len()
        )));
    }
    if !(spec.sigma >= 0.0 && spec.sigma.is_finite()) {
        return Err(Error::Config(format!("noise level {} must be >= 0", spec.sigma)));
    }
    let noise = Normal::new(0.0, spec.sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut base = vec![0.0; d];
    let mut values = Vec::with_capacity(t_len * d);
    for t in 0..t_len {
        let tf = t as f64;
        for (b, v) in base.iter_mut().zip(&spec.variables) {
            *b = v.offset
                + v.slope * tf
                + v.components
                    .iter()
                    .map(|c| c.amplitude * (2.0 * PI * tf / c.period + c.phase).sin())
                    .sum::<f64>();
        }
        for v in 0..d {
            let mixed: f64 = (0..d).map(|j| spec.mix[v * d + j] * base[j]).sum();
            let eps = if spec.sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            values.push(mixed + eps);
        }
    }
    let names = (0..d).map(|v| format!("x{v}")).collect();
    TimeSeriesFrame::new(names, values)
}
