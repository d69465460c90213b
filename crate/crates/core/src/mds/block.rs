use rand::Rng;
use s4m_autodiff::{Binding, Params, Tape, Tensor, Var};

use super::{dual_stream_layer, init_dual_stream, mask_encoder};
use crate::error::{Error, Result};
use crate::ssm::{init_ssm_layer, ssm_layer};

pub const READOUT_W: &str = "readout.w";
pub const READOUT_B: &str = "readout.b";
const LN_EPS: f64 = 1e-5;

/// Shape of the block stack.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockConfig {
    /// Feature width `R`.
    pub r: usize,
    /// Inner channels of the position-wise convolutions.
    pub f_ch: usize,
    pub n_blocks: usize,
    /// SSM state size `H`.
    pub state: usize,
    pub dropout: f64,
    /// First block takes the encoded mask as a second stream.
    pub dual: bool,
}

impl BlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 || self.r == 0 || self.f_ch == 0 || self.state == 0 {
            return Err(Error::Config(format!(
                "block stack needs positive sizes, got {self:?}"
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

fn block_key(i: usize, part: &str) -> String {
    format!("block{i}.{part}")
}

fn uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}

/// Inserts every block parameter and the `R → d` readout.
pub fn init_backbone<R: Rng + ?Sized>(
    params: &mut Params,
    cfg: &BlockConfig,
    d: usize,
    rng: &mut R,
) -> Result<()> {
    cfg.validate()?;
    let (r, f) = (cfg.r, cfg.f_ch);
    for i in 0..cfg.n_blocks {
        if i == 0 && cfg.dual {
            init_dual_stream(params, &block_key(0, "ssm"), &block_key(0, "mask"), r, cfg.state, d, rng);
        } else {
            init_ssm_layer(params, &block_key(i, "ssm"), r, cfg.state, rng);
        }
        params.insert(block_key(i, "ln.gamma"), Tensor::ones(&[r]));
        params.insert(block_key(i, "ln.beta"), Tensor::zeros(&[r]));
        params.insert(block_key(i, "ff1.w"), uniform(&[1, r, f], r, rng));
        params.insert(block_key(i, "ff1.b"), Tensor::zeros(&[f]));
        params.insert(block_key(i, "ff2.w"), uniform(&[1, f, r], f, rng));
        params.insert(block_key(i, "ff2.b"), Tensor::zeros(&[r]));
    }
    params.insert(READOUT_W, uniform(&[r, d], r, rng));
    params.insert(READOUT_B, Tensor::zeros(&[d]));
    Ok(())
}

/// One block on `x [B, L, R]`:
/// SSM (dual-stream when `enc` is given), residual, layer norm; then a
/// kernel-1 convolution to `F` channels with ReLU and dropout, a kernel-1
/// convolution back to `R` with dropout, added onto the normalized stream.
pub fn block_forward(
    tape: &mut Tape,
    bind: &Binding,
    cfg: &BlockConfig,
    i: usize,
    x: Var,
    enc: Option<Var>,
) -> Result<Var> {
    let ssm_prefix = block_key(i, "ssm");
    let s = match enc {
        Some(e) => dual_stream_layer(tape, bind, &ssm_prefix, x, e)?,
        None => ssm_layer(tape, bind, &ssm_prefix, x)?,
    };
    let res = tape.add(s, x)?;
    let norm = tape.layer_norm(res, LN_EPS)?;
    let norm = tape.mul(norm, bind.get(&block_key(i, "ln.gamma"))?)?;
    let x1 = tape.add(norm, bind.get(&block_key(i, "ln.beta"))?)?;

    let h = tape.conv1d(x1, bind.get(&block_key(i, "ff1.w"))?)?;
    let h = tape.add(h, bind.get(&block_key(i, "ff1.b"))?)?;
    let h = tape.relu(h)?;
    let h = tape.dropout(h, cfg.dropout)?;
    let h = tape.conv1d(h, bind.get(&block_key(i, "ff2.w"))?)?;
    let h = tape.add(h, bind.get(&block_key(i, "ff2.b"))?)?;
    let h = tape.dropout(h, cfg.dropout)?;
    Ok(tape.add(x1, h)?)
}

/// Full stack on `o [B, L, R]` with mask `m [B, L, D]`; returns the readout
/// of the last `horizon` steps, `[B, horizon, D]`.
pub fn backbone_forward(
    tape: &mut Tape,
    bind: &Binding,
    cfg: &BlockConfig,
    o: Var,
    m: Option<Var>,
    horizon: usize,
) -> Result<Var> {
    let shape = tape.shape(o).to_vec();
    let len = shape[shape.len() - 2];
    if horizon == 0 || horizon > len {
        return Err(Error::Config(format!(
            "horizon {horizon} must be in 1..={len}"
        )));
    }
    let enc = match (cfg.dual, m) {
        (true, Some(m)) => Some(mask_encoder(tape, bind, &block_key(0, "mask"), m)?),
        (true, None) => {
            return Err(Error::Contract("dual-stream backbone needs a mask".into()))
        }
        (false, _) => None,
    };
    let mut x = o;
    for i in 0..cfg.n_blocks {
        x = block_forward(tape, bind, cfg, i, x, if i == 0 { enc } else { None })?;
    }
    let x = tape.slice(x, shape.len() - 2, len - horizon, horizon)?;
    let y = tape.matmul(x, bind.get(READOUT_W)?)?;
    Ok(tape.add(y, bind.get(READOUT_B)?)?)
}
