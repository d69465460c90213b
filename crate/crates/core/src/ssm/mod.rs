//! Linear state-space machinery: HiPPO-LegS initialization, bilinear
//! discretization, kernel materialization, and the two equivalent execution
//! modes (stepwise recurrence and causal convolution with a skip term).
//!
//! Layers use the per-channel layout: a width-`R` layer is `R` independent
//! single-input single-output systems, each with its own `A`, `B`, `C`, `D`
//! and step size.

mod tape_ops;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub use tape_ops::{
    causal_conv, discretize_input, discretize_state, init_ssm_layer, kernel, layer_channels,
    ssm_layer, SsmLayerNames,
};

pub const LOG_DELTA_MIN: f64 = -6.907_755_278_982_137; // ln(1e-3)
pub const LOG_DELTA_MAX: f64 = -2.302_585_092_994_046; // ln(1e-1)

/// Continuous parameters of one channel.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmChannelParams {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub d: f64,
    pub log_delta: f64,
}

impl SsmChannelParams {
    /// HiPPO-LegS `A`, all-ones `B`, `C ~ N(0, 1/H)`, `D = 1`, and
    /// `log Δ ~ U[ln 1e-3, ln 1e-1]`.
    pub fn init<R: Rng + ?Sized>(state: usize, rng: &mut R) -> Self {
        let scale = 1.0 / (state as f64).sqrt();
        Self {
            a: hippo_legs(state),
            b: DVector::from_element(state, 1.0),
            c: DVector::from_fn(state, |_, _| {
                let z: f64 = StandardNormal.sample(rng);
                z * scale
            }),
            d: 1.0,
            log_delta: rng.random_range(LOG_DELTA_MIN..LOG_DELTA_MAX),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.b.len()
    }

    pub fn delta(&self) -> f64 {
        self.log_delta.exp()
    }
}

/// Discretized state transition and input vector.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSsm {
    pub a_bar: DMatrix<f64>,
    pub b_bar: DVector<f64>,
}

/// Impulse response `k[i] = C Āⁱ B̄`.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmKernel(pub Vec<f64>);

impl SsmKernel {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// HiPPO-LegS state matrix (0-indexed):
/// `A[n][k] = -sqrt((2n+1)(2k+1))` for `n > k`, `-(n+1)` on the diagonal,
/// zero above it.
pub fn hippo_legs(h: usize) -> DMatrix<f64> {
    DMatrix::from_fn(h, h, |n, k| {
        if n > k {
            -(((2 * n + 1) * (2 * k + 1)) as f64).sqrt()
        } else if n == k {
            -((n + 1) as f64)
        } else {
            0.0
        }
    })
}

/// `(I − ΔA/2)⁻¹`, or a discretization error naming `Δ`.
pub(crate) fn bilinear_resolvent(a: &DMatrix<f64>, delta: f64) -> Result<DMatrix<f64>> {
    let h = a.nrows();
    let m = DMatrix::identity(h, h) - a * (delta / 2.0);
    let inv = m.try_inverse().ok_or(Error::Discretization { delta })?;
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::Discretization { delta });
    }
    Ok(inv)
}

/// Bilinear transform: `Ā = (I − ΔA/2)⁻¹(I + ΔA/2)`, `B̄ = (I − ΔA/2)⁻¹ΔB`.
pub fn bilinear_discretize(p: &SsmChannelParams) -> Result<DiscreteSsm> {
    let delta = p.delta();
    let h = p.state_dim();
    let inv = bilinear_resolvent(&p.a, delta)?;
    let n = DMatrix::identity(h, h) + &p.a * (delta / 2.0);
    Ok(DiscreteSsm {
        a_bar: &inv * n,
        b_bar: &inv * (&p.b * delta),
    })
}

/// Discretizes an extra input vector against the same `A` and `Δ`
/// (`Ē = (I − ΔA/2)⁻¹ΔE`).
pub fn discretize_vector(a: &DMatrix<f64>, log_delta: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
    let delta = log_delta.exp();
    let inv = bilinear_resolvent(a, delta)?;
    Ok(inv * (v * delta))
}

/// `k[i] = C·Āⁱ·B̄` for `i < len`, by iterated state application.
pub fn materialize_kernel(d: &DiscreteSsm, c: &DVector<f64>, len: usize) -> SsmKernel {
    let mut x = d.b_bar.clone();
    let mut k = Vec::with_capacity(len);
    for i in 0..len {
        k.push(c.dot(&x));
        if i + 1 < len {
            x = &d.a_bar * x;
        }
    }
    SsmKernel(k)
}

/// Stepwise evaluation of `h_t = Ā h_{t−1} + B̄ u_t`, `y_t = C h_t + D u_t`.
pub fn run_recurrence(
    p: &SsmChannelParams,
    u: &[f64],
    h0: Option<&DVector<f64>>,
) -> Result<(Vec<f64>, DVector<f64>)> {
    let d = bilinear_discretize(p)?;
    let mut h = h0
        .cloned()
        .unwrap_or_else(|| DVector::zeros(p.state_dim()));
    let mut y = Vec::with_capacity(u.len());
    for &ut in u {
        h = &d.a_bar * h + &d.b_bar * ut;
        y.push(p.c.dot(&h) + p.d * ut);
    }
    Ok((y, h))
}

/// `y_t = Σ_{i≤t} k[i]·u[t−i] + D·u_t` via FFT on zero-padded length-`2L` buffers.
pub fn apply_convolution(k: &SsmKernel, d: f64, u: &[f64]) -> Result<Vec<f64>> {
    if k.len() != u.len() {
        return Err(Error::Contract(format!(
            "kernel length {} != input length {}",
            k.len(),
            u.len()
        )));
    }
    let conv = s4m_autodiff::fft::causal_convolve(u, k.as_slice());
    Ok(conv.iter().zip(u).map(|(c, x)| c + d * x).collect())
}
