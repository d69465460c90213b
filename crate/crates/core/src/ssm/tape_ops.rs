//! Differentiable, channel-batched versions of the SSM primitives.
//!
//! Layout for a layer with `R` channels and state size `H`:
//! `a [R,H,H]`, `log_delta [R]`, `b [R,H]`, `c [R,H]`, `d [R]`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use s4m_autodiff::{Binding, CustomOp, Params, Tape, Tensor, Var};

use super::{bilinear_resolvent, SsmChannelParams};
use crate::error::{Error, Result};

/// Parameter keys of one SSM layer under `prefix`.
#[derive(Clone, Debug)]
pub struct SsmLayerNames {
    pub a: String,
    pub log_delta: String,
    pub b: String,
    pub c: String,
    pub d: String,
}

impl SsmLayerNames {
    pub fn new(prefix: &str) -> Self {
        Self {
            a: format!("{prefix}.a"),
            log_delta: format!("{prefix}.log_delta"),
            b: format!("{prefix}.b"),
            c: format!("{prefix}.c"),
            d: format!("{prefix}.d"),
        }
    }
}

/// Inserts freshly initialized per-channel parameters under `prefix`.
pub fn init_ssm_layer<R: Rng + ?Sized>(
    params: &mut Params,
    prefix: &str,
    channels: usize,
    state: usize,
    rng: &mut R,
) {
    let chans: Vec<SsmChannelParams> = (0..channels)
        .map(|_| SsmChannelParams::init(state, rng))
        .collect();
    let names = SsmLayerNames::new(prefix);
    let mut a = Vec::with_capacity(channels * state * state);
    let (mut b, mut c) = (Vec::new(), Vec::new());
    for ch in &chans {
        for i in 0..state {
            for j in 0..state {
                a.push(ch.a[(i, j)]);
            }
        }
        b.extend(ch.b.iter());
        c.extend(ch.c.iter());
    }
    params.insert(names.a, Tensor::new(&[channels, state, state], a).unwrap());
    params.insert(
        names.log_delta,
        Tensor::from_vec(chans.iter().map(|c| c.log_delta).collect()),
    );
    params.insert(names.b, Tensor::new(&[channels, state], b).unwrap());
    params.insert(names.c, Tensor::new(&[channels, state], c).unwrap());
    params.insert(names.d, Tensor::from_vec(chans.iter().map(|c| c.d).collect()));
}

/// Reads the per-channel parameters stored under `prefix`.
pub fn layer_channels(params: &Params, prefix: &str) -> Result<Vec<SsmChannelParams>> {
    let n = SsmLayerNames::new(prefix);
    let (a, ld) = (params.require(&n.a)?, params.require(&n.log_delta)?);
    let (r, h) = state_dims(a, ld)?;
    let (b, c, d) = (params.require(&n.b)?, params.require(&n.c)?, params.require(&n.d)?);
    if b.shape() != [r, h] || c.shape() != [r, h] || d.shape() != [r] {
        return Err(Error::Contract(format!(
            "layer `{prefix}` has B {:?}, C {:?}, D {:?} for {r} channels of state {h}",
            b.shape(),
            c.shape(),
            d.shape()
        )));
    }
    Ok((0..r)
        .map(|i| SsmChannelParams {
            a: channel_matrix(a, i, h),
            b: channel_vector(b, i, h),
            c: channel_vector(c, i, h),
            d: d.data()[i],
            log_delta: ld.data()[i],
        })
        .collect())
}

fn channel_matrix(t: &Tensor, r: usize, h: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(h, h, &t.data()[r * h * h..(r + 1) * h * h])
}

fn channel_vector(t: &Tensor, r: usize, h: usize) -> DVector<f64> {
    DVector::from_column_slice(&t.data()[r * h..(r + 1) * h])
}

fn push_row_major(dst: &mut Vec<f64>, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            dst.push(m[(i, j)]);
        }
    }
}

fn state_dims(a: &Tensor, log_delta: &Tensor) -> Result<(usize, usize)> {
    let s = a.shape();
    if s.len() != 3 || s[1] != s[2] || log_delta.shape() != [s[0]] {
        return Err(Error::Contract(format!(
            "state matrix {s:?} with step sizes {:?}",
            log_delta.shape()
        )));
    }
    Ok((s[0], s[1]))
}

struct DiscretizeStateOp;

impl CustomOp for DiscretizeStateOp {
    fn name(&self) -> &'static str {
        "bilinear_state"
    }

    fn vjp(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let (a, ld) = (inputs[0], inputs[1]);
        let (r_n, h) = (a.shape()[0], a.shape()[1]);
        let mut ga = Vec::with_capacity(a.numel());
        let mut gld = Vec::with_capacity(r_n);
        for r in 0..r_n {
            let am = channel_matrix(a, r, h);
            let delta = ld.data()[r].exp();
            let inv = bilinear_resolvent(&am, delta).expect("forward succeeded");
            let a_bar = channel_matrix(output, r, h);
            let g = channel_matrix(grad, r, h);
            let p = inv.transpose() * g;
            let s = p * (DMatrix::identity(h, h) + a_bar).transpose() * 0.5;
            push_row_major(&mut ga, &(&s * delta));
            gld.push(delta * s.component_mul(&am).sum());
        }
        vec![
            Tensor::new(a.shape(), ga).unwrap(),
            Tensor::from_vec(gld),
        ]
    }
}

/// `Ā = (I − ΔA/2)⁻¹(I + ΔA/2)` per channel.
pub fn discretize_state(tape: &mut Tape, a: Var, log_delta: Var) -> Result<Var> {
    let (at, lt) = (tape.value(a), tape.value(log_delta));
    let (r_n, h) = state_dims(at, lt)?;
    let mut out = Vec::with_capacity(at.numel());
    for r in 0..r_n {
        let am = channel_matrix(at, r, h);
        let delta = lt.data()[r].exp();
        let inv = bilinear_resolvent(&am, delta)?;
        let n = DMatrix::identity(h, h) + &am * (delta / 2.0);
        push_row_major(&mut out, &(inv * n));
    }
    let t = Tensor::new(at.shape(), out)?;
    Ok(tape.custom(Box::new(DiscretizeStateOp), &[a, log_delta], t)?)
}

struct DiscretizeInputOp;

impl CustomOp for DiscretizeInputOp {
    fn name(&self) -> &'static str {
        "bilinear_input"
    }

    fn vjp(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let (a, ld, b) = (inputs[0], inputs[1], inputs[2]);
        let (r_n, h) = (a.shape()[0], a.shape()[1]);
        let mut ga = Vec::with_capacity(a.numel());
        let mut gld = Vec::with_capacity(r_n);
        let mut gb = Vec::with_capacity(b.numel());
        for r in 0..r_n {
            let am = channel_matrix(a, r, h);
            let delta = ld.data()[r].exp();
            let inv = bilinear_resolvent(&am, delta).expect("forward succeeded");
            let bv = channel_vector(b, r, h);
            let b_bar = channel_vector(output, r, h);
            let q = inv.transpose() * channel_vector(grad, r, h);
            let s = &q * b_bar.transpose() * 0.5;
            push_row_major(&mut ga, &(&s * delta));
            gld.push(delta * (s.component_mul(&am).sum() + q.dot(&bv)));
            gb.extend((q * delta).iter());
        }
        vec![
            Tensor::new(a.shape(), ga).unwrap(),
            Tensor::from_vec(gld),
            Tensor::new(b.shape(), gb).unwrap(),
        ]
    }
}

/// `B̄ = (I − ΔA/2)⁻¹ΔB` per channel (also used for the mask stream's `Ē`).
pub fn discretize_input(tape: &mut Tape, a: Var, log_delta: Var, b: Var) -> Result<Var> {
    let (at, lt, bt) = (tape.value(a), tape.value(log_delta), tape.value(b));
    let (r_n, h) = state_dims(at, lt)?;
    if bt.shape() != [r_n, h] {
        return Err(Error::Contract(format!(
            "input vector {:?} for {r_n} channels of state {h}",
            bt.shape()
        )));
    }
    let mut out = Vec::with_capacity(bt.numel());
    for r in 0..r_n {
        let am = channel_matrix(at, r, h);
        let delta = lt.data()[r].exp();
        let inv = bilinear_resolvent(&am, delta)?;
        out.extend((inv * (channel_vector(bt, r, h) * delta)).iter());
    }
    let t = Tensor::new(bt.shape(), out)?;
    Ok(tape.custom(Box::new(DiscretizeInputOp), &[a, log_delta, b], t)?)
}

struct KernelOp {
    len: usize,
}

fn kernel_states(a_bar: &DMatrix<f64>, b_bar: &DVector<f64>, len: usize) -> Vec<DVector<f64>> {
    let mut xs = Vec::with_capacity(len);
    let mut x = b_bar.clone();
    for i in 0..len {
        if i + 1 < len {
            let next = a_bar * &x;
            xs.push(x);
            x = next;
        } else {
            xs.push(x.clone());
        }
    }
    xs
}

impl CustomOp for KernelOp {
    fn name(&self) -> &'static str {
        "ssm_kernel"
    }

    fn vjp(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let (ab, bb, c) = (inputs[0], inputs[1], inputs[2]);
        let (r_n, h) = (bb.shape()[0], bb.shape()[1]);
        let l = self.len;
        let mut ga = Vec::with_capacity(ab.numel());
        let mut gb = Vec::with_capacity(bb.numel());
        let mut gc = Vec::with_capacity(c.numel());
        for r in 0..r_n {
            let am = channel_matrix(ab, r, h);
            let cv = channel_vector(c, r, h);
            let xs = kernel_states(&am, &channel_vector(bb, r, h), l);
            let g = &grad.data()[r * l..(r + 1) * l];
            let mut gcv = DVector::zeros(h);
            for (x, gi) in xs.iter().zip(g) {
                gcv += x * *gi;
            }
            // λ_i = g_i Cᵀ + Āᵀ λ_{i+1}; ∂/∂Ā = Σ λ_{i+1} x_iᵀ; ∂/∂B̄ = λ_0
            let at = am.transpose();
            let mut lambda = &cv * g[l - 1];
            let mut gam = DMatrix::zeros(h, h);
            for i in (0..l - 1).rev() {
                gam += &lambda * xs[i].transpose();
                lambda = &cv * g[i] + &at * &lambda;
            }
            push_row_major(&mut ga, &gam);
            gb.extend(lambda.iter());
            gc.extend(gcv.iter());
        }
        vec![
            Tensor::new(ab.shape(), ga).unwrap(),
            Tensor::new(bb.shape(), gb).unwrap(),
            Tensor::new(c.shape(), gc).unwrap(),
        ]
    }
}

/// `k[r, i] = C_r Ā_rⁱ B̄_r` for `i < len`, shape `[R, len]`.
pub fn kernel(tape: &mut Tape, a_bar: Var, b_bar: Var, c: Var, len: usize) -> Result<Var> {
    let (at, bt, ct) = (tape.value(a_bar), tape.value(b_bar), tape.value(c));
    let bs = bt.shape();
    if len == 0
        || bs.len() != 2
        || ct.shape() != bs
        || at.shape() != [bs[0], bs[1], bs[1]]
    {
        return Err(Error::Contract(format!(
            "kernel inputs {:?}, {:?}, {:?}, length {len}",
            at.shape(),
            bs,
            ct.shape()
        )));
    }
    let (r_n, h) = (bs[0], bs[1]);
    let mut out = Vec::with_capacity(r_n * len);
    for r in 0..r_n {
        let am = channel_matrix(at, r, h);
        let cv = channel_vector(ct, r, h);
        let mut x = channel_vector(bt, r, h);
        for i in 0..len {
            out.push(cv.dot(&x));
            if i + 1 < len {
                x = &am * x;
            }
        }
    }
    let t = Tensor::new(&[r_n, len], out)?;
    Ok(tape.custom(Box::new(KernelOp { len }), &[a_bar, b_bar, c], t)?)
}

/// Per-channel causal convolution of `u [.., L, R]` with kernels `k [R, L]`,
/// through FFT on zero-padded length-`2L` buffers.
pub fn causal_conv(tape: &mut Tape, k: Var, u: Var) -> Result<Var> {
    let us = tape.shape(u).to_vec();
    let ks = tape.shape(k).to_vec();
    let r = us.len();
    if r < 2 || ks != [us[r - 1], us[r - 2]] {
        return Err(Error::Contract(format!(
            "kernel {ks:?} does not match input {us:?}"
        )));
    }
    let (l, ch) = (us[r - 2], us[r - 1]);
    let ut = tape.transpose(u)?;
    let mut pad_shape = us.clone();
    pad_shape[r - 2] = ch;
    pad_shape[r - 1] = l;
    let zeros_u = tape.constant(Tensor::zeros(&pad_shape));
    let up = tape.concat(&[ut, zeros_u], r - 1)?;
    let zeros_k = tape.constant(Tensor::zeros(&[ch, l]));
    let kp = tape.concat(&[k, zeros_k], 1)?;
    let y = tape.circular_conv(up, kp)?;
    let y = tape.slice(y, r - 1, 0, l)?;
    Ok(tape.transpose(y)?)
}

/// Plain S4 layer in convolution mode: `y = K * u + D ∘ u`.
pub fn ssm_layer(tape: &mut Tape, bind: &Binding, prefix: &str, u: Var) -> Result<Var> {
    let names = SsmLayerNames::new(prefix);
    let (a, ld) = (bind.get(&names.a)?, bind.get(&names.log_delta)?);
    let a_bar = discretize_state(tape, a, ld)?;
    let b_bar = discretize_input(tape, a, ld, bind.get(&names.b)?)?;
    let len = tape.shape(u)[tape.shape(u).len() - 2];
    let k = kernel(tape, a_bar, b_bar, bind.get(&names.c)?, len)?;
    let conv = causal_conv(tape, k, u)?;
    let skip = tape.mul(u, bind.get(&names.d)?)?;
    Ok(tape.add(conv, skip)?)
}
