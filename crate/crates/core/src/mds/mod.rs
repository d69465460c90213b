//! Missing-aware dual-stream SSM layer, the block built around it, and the
//! stacked backbone.
//!
//! The dual-stream layer runs two inputs through one state per channel:
//! `h_t = Ā h_{t−1} + B̄ o_t + Ē ẽ_t`, `y_t = C h_t + D o_t + F ẽ_t`, where
//! `ẽ = relu(m W_m + b_m)` encodes the observation mask.

mod block;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use s4m_autodiff::{Binding, Params, Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::ssm::{
    self, apply_convolution, bilinear_discretize, discretize_vector, init_ssm_layer,
    materialize_kernel, SsmChannelParams, SsmKernel, SsmLayerNames,
};

pub use block::{
    backbone_forward, block_forward, init_backbone, BlockConfig, READOUT_B, READOUT_W,
};

/// Dual-stream parameters for every channel of a layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DualStreamParams {
    pub base: Vec<SsmChannelParams>,
    pub e: Vec<DVector<f64>>,
    pub f: Vec<f64>,
    /// `D × R`.
    pub mask_w: DMatrix<f64>,
    pub mask_b: DVector<f64>,
}

/// Extra keys of a dual-stream layer beyond the plain SSM ones.
pub fn mask_stream_names(ssm_prefix: &str, mask_prefix: &str) -> [String; 4] {
    [
        format!("{ssm_prefix}.e"),
        format!("{ssm_prefix}.f"),
        format!("{mask_prefix}.w"),
        format!("{mask_prefix}.b"),
    ]
}

/// Inserts a dual-stream layer: plain SSM channels, `E` and `F` drawn like
/// the `B` and `D` of an independent layer, and a mask encoder with uniform
/// `±1/√D` weights and zero bias.
pub fn init_dual_stream<R: Rng + ?Sized>(
    params: &mut Params,
    ssm_prefix: &str,
    mask_prefix: &str,
    channels: usize,
    state: usize,
    d: usize,
    rng: &mut R,
) {
    init_ssm_layer(params, ssm_prefix, channels, state, rng);
    let [e, f, w, b] = mask_stream_names(ssm_prefix, mask_prefix);
    let mut twin = Params::new();
    init_ssm_layer(&mut twin, "twin", channels, state, rng);
    let names = SsmLayerNames::new("twin");
    params.insert(e, twin.require(&names.b).unwrap().clone());
    params.insert(f, twin.require(&names.d).unwrap().clone());
    let bound = 1.0 / (d as f64).sqrt();
    params.insert(
        w,
        Tensor::from_fn(&[d, channels], |_| rng.random_range(-bound..bound)),
    );
    params.insert(b, Tensor::zeros(&[channels]));
}

impl DualStreamParams {
    /// Reads the layer stored under the given prefixes.
    pub fn from_params(params: &Params, ssm_prefix: &str, mask_prefix: &str) -> Result<Self> {
        let [en, fnm, wn, bn] = mask_stream_names(ssm_prefix, mask_prefix);
        let base = ssm::layer_channels(params, ssm_prefix)?;
        let h = base.first().map_or(0, SsmChannelParams::state_dim);
        let r = base.len();
        let row = |t: &Tensor, i: usize| DVector::from_column_slice(&t.data()[i * h..(i + 1) * h]);
        let e = params.require(&en)?;
        let w = params.require(&wn)?;
        Ok(Self {
            base,
            e: (0..r).map(|i| row(e, i)).collect(),
            f: params.require(&fnm)?.data().to_vec(),
            mask_w: DMatrix::from_row_slice(w.shape()[0], w.shape()[1], w.data()),
            mask_b: DVector::from_column_slice(params.require(&bn)?.data()),
        })
    }

    pub fn channels(&self) -> usize {
        self.base.len()
    }
}

fn check_binary(m: &[f64]) -> Result<()> {
    match m.iter().position(|&v| v != 0.0 && v != 1.0) {
        Some(i) => Err(Error::Contract(format!(
            "mask entry {i} is {}, expected 0 or 1",
            m[i]
        ))),
        None => Ok(()),
    }
}

/// `relu(m W + b)` row by row: `L × D` → `L × R`.
pub fn mask_encode(m: &DMatrix<f64>, w: &DMatrix<f64>, b: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_binary(m.as_slice())?;
    if m.ncols() != w.nrows() || w.ncols() != b.len() {
        return Err(Error::Contract(format!(
            "mask width {} vs encoder {}×{}",
            m.ncols(),
            w.nrows(),
            w.ncols()
        )));
    }
    let mut out = m * w;
    for mut row in out.row_iter_mut() {
        for (v, bias) in row.iter_mut().zip(b.iter()) {
            *v = (*v + bias).max(0.0);
        }
    }
    Ok(out)
}

fn check_stream_shapes(p: &DualStreamParams, o: &DMatrix<f64>, enc: &DMatrix<f64>) -> Result<()> {
    if o.nrows() != enc.nrows() {
        return Err(Error::Contract(format!(
            "data stream has {} steps, mask stream {}",
            o.nrows(),
            enc.nrows()
        )));
    }
    if o.ncols() != p.channels() || enc.ncols() != p.channels() {
        return Err(Error::Contract(format!(
            "{} channels vs streams of width {} and {}",
            p.channels(),
            o.ncols(),
            enc.ncols()
        )));
    }
    Ok(())
}

/// Stepwise evaluation given an already encoded mask stream `ẽ` (`L × R`).
pub fn dual_stream_recurrence_encoded(
    p: &DualStreamParams,
    o: &DMatrix<f64>,
    enc: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_stream_shapes(p, o, enc)?;
    let mut y = DMatrix::zeros(o.nrows(), o.ncols());
    for (r, ch) in p.base.iter().enumerate() {
        let d = bilinear_discretize(ch)?;
        let e_bar = discretize_vector(&ch.a, ch.log_delta, &p.e[r])?;
        let mut h = DVector::zeros(ch.state_dim());
        for t in 0..o.nrows() {
            let (u, e) = (o[(t, r)], enc[(t, r)]);
            h = &d.a_bar * h + &d.b_bar * u + &e_bar * e;
            y[(t, r)] = ch.c.dot(&h) + ch.d * u + p.f[r] * e;
        }
    }
    Ok(y)
}

/// Two-kernel form given an already encoded mask stream.
pub fn dual_stream_convolution_encoded(
    p: &DualStreamParams,
    o: &DMatrix<f64>,
    enc: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_stream_shapes(p, o, enc)?;
    let l = o.nrows();
    let mut y = DMatrix::zeros(l, o.ncols());
    for (r, ch) in p.base.iter().enumerate() {
        let d = bilinear_discretize(ch)?;
        let k1 = materialize_kernel(&d, &ch.c, l);
        let e_bar = discretize_vector(&ch.a, ch.log_delta, &p.e[r])?;
        let k2 = materialize_kernel(
            &ssm::DiscreteSsm {
                a_bar: d.a_bar.clone(),
                b_bar: e_bar,
            },
            &ch.c,
            l,
        );
        let u: Vec<f64> = o.column(r).iter().copied().collect();
        let e: Vec<f64> = enc.column(r).iter().copied().collect();
        let data = apply_convolution(&k1, ch.d, &u)?;
        let mask = apply_convolution(&k2, p.f[r], &e)?;
        for t in 0..l {
            y[(t, r)] = data[t] + mask[t];
        }
    }
    Ok(y)
}

/// Mask-stream kernels `(K1, K2)` of one channel over `len` steps.
pub fn dual_kernels(p: &DualStreamParams, channel: usize, len: usize) -> Result<(SsmKernel, SsmKernel)> {
    let ch = &p.base[channel];
    let d = bilinear_discretize(ch)?;
    let e_bar = discretize_vector(&ch.a, ch.log_delta, &p.e[channel])?;
    let k1 = materialize_kernel(&d, &ch.c, len);
    let k2 = materialize_kernel(
        &ssm::DiscreteSsm {
            a_bar: d.a_bar,
            b_bar: e_bar,
        },
        &ch.c,
        len,
    );
    Ok((k1, k2))
}

pub fn dual_stream_recurrence(
    p: &DualStreamParams,
    o: &DMatrix<f64>,
    m: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let enc = mask_encode(m, &p.mask_w, &p.mask_b)?;
    dual_stream_recurrence_encoded(p, o, &enc)
}

pub fn dual_stream_convolution(
    p: &DualStreamParams,
    o: &DMatrix<f64>,
    m: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let enc = mask_encode(m, &p.mask_w, &p.mask_b)?;
    dual_stream_convolution_encoded(p, o, &enc)
}

/// Mask encoder on the tape: `m [.., L, D]` → `[.., L, R]`.
pub fn mask_encoder(tape: &mut Tape, bind: &Binding, mask_prefix: &str, m: Var) -> Result<Var> {
    check_binary(tape.value(m).data())?;
    let w = bind.get(&format!("{mask_prefix}.w"))?;
    let b = bind.get(&format!("{mask_prefix}.b"))?;
    let x = tape.matmul(m, w)?;
    let x = tape.add(x, b)?;
    Ok(tape.relu(x)?)
}

/// Dual-stream layer in convolution mode on the tape, for `o, ẽ [.., L, R]`.
pub fn dual_stream_layer(
    tape: &mut Tape,
    bind: &Binding,
    ssm_prefix: &str,
    o: Var,
    enc: Var,
) -> Result<Var> {
    let n = SsmLayerNames::new(ssm_prefix);
    let e = bind.get(&format!("{ssm_prefix}.e"))?;
    let f = bind.get(&format!("{ssm_prefix}.f"))?;
    let (a, ld, c) = (bind.get(&n.a)?, bind.get(&n.log_delta)?, bind.get(&n.c)?);
    let shape = tape.shape(o).to_vec();
    if tape.shape(enc) != shape.as_slice() {
        return Err(Error::Contract(format!(
            "data stream {shape:?} vs mask stream {:?}",
            tape.shape(enc)
        )));
    }
    let len = shape[shape.len() - 2];
    let a_bar = ssm::discretize_state(tape, a, ld)?;
    let b_bar = ssm::discretize_input(tape, a, ld, bind.get(&n.b)?)?;
    let e_bar = ssm::discretize_input(tape, a, ld, e)?;
    let k1 = ssm::kernel(tape, a_bar, b_bar, c, len)?;
    let k2 = ssm::kernel(tape, a_bar, e_bar, c, len)?;
    let c1 = ssm::causal_conv(tape, k1, o)?;
    let c2 = ssm::causal_conv(tape, k2, enc)?;
    let y = tape.add(c1, c2)?;
    let skip = tape.mul(o, bind.get(&n.d)?)?;
    let y = tape.add(y, skip)?;
    let mskip = tape.mul(enc, f)?;
    Ok(tape.add(y, mskip)?)
}
