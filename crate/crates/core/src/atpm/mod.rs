//! Adaptive temporal prototype mapping: local statistics, window encoders,
//! the prototype bank with its read and write paths, and the momentum copy
//! of the query encoder.

mod bank;
mod encoder;
mod kmeans;
mod local_stats;

use rand::Rng;
use s4m_autodiff::{Binding, Params, Tape, Tensor, Var};

use crate::error::{Error, Result};

pub use bank::{normalized, BankConfig, Cluster, Member, PrototypeBank, WriteOutcome};
pub use encoder::{
    encode_slices, encode_steps, init_encoder, slice_ending_at, EncoderConfig, EncoderNames,
};
pub use kmeans::kmeans;
pub use local_stats::{decay_names, init_decay, local_stats, window_extremes, LocalStats, WindowExtremes};

/// Keys of the read-path combination `v = [z, q, q̂] W + d`.
pub fn combine_names(prefix: &str) -> (String, String) {
    (format!("{prefix}.w"), format!("{prefix}.d"))
}

pub fn init_combine<R: Rng + ?Sized>(params: &mut Params, prefix: &str, d: usize, r: usize, rng: &mut R) {
    let (w, b) = combine_names(prefix);
    let fan = d + 2 * r;
    let bound = 1.0 / (fan as f64).sqrt();
    params.insert(w, Tensor::from_fn(&[fan, r], |_| rng.random_range(-bound..bound)));
    params.insert(b, Tensor::zeros(&[r]));
}

pub struct ReadOutput {
    /// `[.., L, R]`.
    pub o: Var,
    /// Selected cluster positions, `k` per step, row-major.
    pub selected: Vec<usize>,
    /// Softmax weights over the selected clusters, `[.., L, k]`.
    pub weights: Var,
    pub k: usize,
}

/// Cosine top-K read against the bank centroids for queries `q [.., L, R]`
/// and local statistics `z [.., L, D]`.
pub fn bank_read(
    tape: &mut Tape,
    bind: &Binding,
    combine_prefix: &str,
    bank: &PrototypeBank,
    q: Var,
    z: Var,
) -> Result<ReadOutput> {
    if bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    let qs = tape.shape(q).to_vec();
    let rank = qs.len();
    let r = qs[rank - 1];
    if r != bank.dim {
        return Err(Error::Contract(format!(
            "queries of width {r} for a bank of width {}",
            bank.dim
        )));
    }
    let n = bank.len();
    let k = bank.cfg.top_k.min(n);
    let rows = tape.value(q).numel() / r;

    let qn = tape.l2_normalize(q)?;
    let cents = bank.centroid_rows();
    let mut ct = vec![0.0; r * n];
    for j in 0..n {
        for i in 0..r {
            ct[i * n + j] = cents[j * r + i];
        }
    }
    let ct = tape.constant(Tensor::new(&[r, n], ct)?);
    let rho = tape.matmul(qn, ct)?;

    let mut selected = Vec::with_capacity(rows * k);
    {
        let rv = tape.value(rho).data();
        let mut order: Vec<usize> = (0..n).collect();
        for row in 0..rows {
            let s = &rv[row * n..(row + 1) * n];
            order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
            selected.extend_from_slice(&order[..k]);
            order.sort_unstable();
        }
    }
    let top = tape.gather_last(rho, &selected, k)?;
    let weights = tape.softmax(top, rank - 1)?;

    let mut picked = Vec::with_capacity(rows * k * r);
    for &j in &selected {
        picked.extend_from_slice(&cents[j * r..(j + 1) * r]);
    }
    let picked = tape.constant(Tensor::new(&[rows, k, r], picked)?);
    let w3 = tape.reshape(weights, &[rows, 1, k])?;
    let q_hat = tape.matmul(w3, picked)?;
    let q_hat = tape.reshape(q_hat, &qs)?;

    let (wn, dn) = combine_names(combine_prefix);
    let cat = tape.concat(&[z, q, q_hat], rank - 1)?;
    let v = tape.matmul(cat, bind.get(&wn)?)?;
    let v = tape.add(v, bind.get(&dn)?)?;
    let o = tape.add(q, v)?;
    Ok(ReadOutput { o, selected, weights, k })
}

/// `θp′ = γ θp + (1 − γ) θq` for two parameter sets with identical keys and
/// shapes.
pub fn momentum_update(theta_p: &Params, theta_q: &Params, gamma: f64) -> Result<Params> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Config(format!("momentum {gamma} outside [0, 1)")));
    }
    if theta_p.len() != theta_q.len() {
        return Err(Error::Contract(format!(
            "{} prototype-encoder tensors vs {} query-encoder tensors",
            theta_p.len(),
            theta_q.len()
        )));
    }
    let mut out = Params::new();
    for (name, p) in theta_p.iter() {
        let q = theta_q
            .get(name)
            .ok_or_else(|| Error::Contract(format!("query encoder lacks `{name}`")))?;
        if p.shape() != q.shape() {
            return Err(Error::Contract(format!(
                "`{name}` has shape {:?} vs {:?}",
                p.shape(),
                q.shape()
            )));
        }
        out.insert(name, p.zip_map(q, |a, b| gamma * a + (1.0 - gamma) * b)?);
    }
    Ok(out)
}
