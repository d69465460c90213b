//! Window encoder shared by the query and prototype paths.
//!
//! A slice `[s, D]` goes through: valid unfolding into `T_c = s − W + 1`
//! windows of `W` rows, a `W×D → R` convolution with ReLU and dropout,
//! single-head self-attention over the `T_c` steps (residual), and an SSM
//! compression that keeps only the final output step.

use rand::Rng;
use s4m_autodiff::{Binding, Params, Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::ssm::{self, init_ssm_layer, SsmLayerNames};

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    /// Slice length `s`.
    pub window: usize,
    /// Convolution height `W`.
    pub conv_width: usize,
    /// Output width `R`.
    pub r: usize,
    /// State size of the compression SSM.
    pub state: usize,
    pub dropout: f64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conv_width == 0 || self.window < self.conv_width {
            return Err(Error::Config(format!(
                "encoder slice length {} must be at least the convolution width {} (> 0)",
                self.window, self.conv_width
            )));
        }
        if self.r == 0 || self.state == 0 {
            return Err(Error::Config("encoder widths must be positive".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.window - self.conv_width + 1
    }
}

pub struct EncoderNames {
    pub conv_w: String,
    pub conv_b: String,
    pub wq: String,
    pub wk: String,
    pub wv: String,
    pub ssm: String,
}

impl EncoderNames {
    pub fn new(prefix: &str) -> Self {
        Self {
            conv_w: format!("{prefix}.conv.w"),
            conv_b: format!("{prefix}.conv.b"),
            wq: format!("{prefix}.attn.wq"),
            wk: format!("{prefix}.attn.wk"),
            wv: format!("{prefix}.attn.wv"),
            ssm: format!("{prefix}.ssm"),
        }
    }
}

pub fn init_encoder<R: Rng + ?Sized>(
    params: &mut Params,
    prefix: &str,
    d: usize,
    cfg: &EncoderConfig,
    rng: &mut R,
) -> Result<()> {
    cfg.validate()?;
    let n = EncoderNames::new(prefix);
    let fan = cfg.conv_width * d;
    let mut uniform = |shape: &[usize], fan_in: usize| {
        let b = 1.0 / (fan_in as f64).sqrt();
        Tensor::from_fn(shape, |_| rng.random_range(-b..b))
    };
    params.insert(n.conv_w, uniform(&[fan, cfg.r], fan));
    params.insert(n.conv_b, Tensor::zeros(&[cfg.r]));
    params.insert(n.wq, uniform(&[cfg.r, cfg.r], cfg.r));
    params.insert(n.wk, uniform(&[cfg.r, cfg.r], cfg.r));
    params.insert(n.wv, uniform(&[cfg.r, cfg.r], cfg.r));
    init_ssm_layer(params, &n.ssm, cfg.r, cfg.state, rng);
    Ok(())
}

/// Encodes slices `x [.., s, D]` into `[.., R]`.
pub fn encode_slices(
    tape: &mut Tape,
    bind: &Binding,
    prefix: &str,
    cfg: &EncoderConfig,
    x: Var,
) -> Result<Var> {
    cfg.validate()?;
    let shape = tape.shape(x).to_vec();
    let rank = shape.len();
    if rank < 2 || shape[rank - 2] != cfg.window {
        return Err(Error::Contract(format!(
            "encoder expects [.., {}, D] slices, got {shape:?}",
            cfg.window
        )));
    }
    let (s, d) = (shape[rank - 2], shape[rank - 1]);
    let n_slices = shape[..rank - 2].iter().product::<usize>();
    let (tc, r) = (cfg.steps(), cfg.r);
    let n = EncoderNames::new(prefix);

    let x = tape.reshape(x, &[n_slices, s, d])?;
    let u = tape.unfold(x, cfg.conv_width)?;
    let c = tape.matmul(u, bind.get(&n.conv_w)?)?;
    let c = tape.add(c, bind.get(&n.conv_b)?)?;
    let c = tape.relu(c)?;
    let c = tape.dropout(c, cfg.dropout)?;

    let q = tape.matmul(c, bind.get(&n.wq)?)?;
    let k = tape.matmul(c, bind.get(&n.wk)?)?;
    let v = tape.matmul(c, bind.get(&n.wv)?)?;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (r as f64).sqrt())?;
    let attn = tape.softmax(scores, 2)?;
    let ctx = tape.matmul(attn, v)?;
    let a = tape.add(c, ctx)?;

    // Final output step of the channelwise SSM: Σ_i k[i]·a[T_c−1−i] + D·a[T_c−1].
    let sn = SsmLayerNames::new(&n.ssm);
    let (sa, sld) = (bind.get(&sn.a)?, bind.get(&sn.log_delta)?);
    let a_bar = ssm::discretize_state(tape, sa, sld)?;
    let b_bar = ssm::discretize_input(tape, sa, sld, bind.get(&sn.b)?)?;
    let kern = ssm::kernel(tape, a_bar, b_bar, bind.get(&sn.c)?, tc)?;
    let kern = tape.flip(kern, 1)?;
    let kern = tape.transpose(kern)?;
    let weighted = tape.mul(a, kern)?;
    let out = tape.sum_axis(weighted, 1)?;
    let last = tape.slice(a, 1, tc - 1, 1)?;
    let last = tape.reshape(last, &[n_slices, r])?;
    let skip = tape.mul(last, bind.get(&sn.d)?)?;
    let out = tape.add(out, skip)?;

    let mut out_shape = shape[..rank - 2].to_vec();
    out_shape.push(r);
    Ok(tape.reshape(out, &out_shape)?)
}

/// Query encoding for every time step of `z [.., L, D]`: each step sees the
/// `s` rows ending at it, left-padded by repeating the first row. `[.., L, R]`.
pub fn encode_steps(
    tape: &mut Tape,
    bind: &Binding,
    prefix: &str,
    cfg: &EncoderConfig,
    z: Var,
) -> Result<Var> {
    let slices = tape.delay_embed(z, cfg.window)?;
    encode_slices(tape, bind, prefix, cfg, slices)
}

/// The slice of `z [L, D]` (row-major values) ending at `t`, padded like
/// [`encode_steps`].
pub fn slice_ending_at(z: &[f64], d: usize, t: usize, window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(window * d);
    for j in 0..window {
        let src = (t + j + 1).saturating_sub(window);
        out.extend_from_slice(&z[src * d..(src + 1) * d]);
    }
    out
}
