//! Local statistics: missing entries are filled with a learned, distance-
//! weighted blend of the window's observed per-variable minimum and maximum.
//!
//! `Ωi = exp(−max(0, Wi·Δi + bi))`, `Ωi′ = Ωi / (Ω1 + Ω2)`,
//! `Z = M∘X + (1 − M)∘(Ω1′ x_min + Ω2′ x_max)`.

use rand::Rng;
use s4m_autodiff::{Binding, Params, Tape, Tensor, Var};

use crate::error::{Error, Result};

/// Parameter keys of the decay weights under `prefix`.
pub fn decay_names(prefix: &str) -> [String; 4] {
    ["w1", "b1", "w2", "b2"].map(|k| format!("{prefix}.{k}"))
}

/// Per-variable decay weights, small positive slopes and zero offsets.
pub fn init_decay<R: Rng + ?Sized>(params: &mut Params, prefix: &str, d: usize, rng: &mut R) {
    let [w1, b1, w2, b2] = decay_names(prefix);
    params.insert(w1, Tensor::from_fn(&[d], |_| rng.random_range(0.05..0.2)));
    params.insert(b1, Tensor::zeros(&[d]));
    params.insert(w2, Tensor::from_fn(&[d], |_| rng.random_range(0.05..0.2)));
    params.insert(b2, Tensor::zeros(&[d]));
}

/// Data-only ingredients of the fill, laid out like `x` (`[.., L, D]`).
#[derive(Clone, Debug, PartialEq)]
pub struct WindowExtremes {
    pub shape: Vec<usize>,
    /// `m∘x`, with unobserved positions set to exactly zero.
    pub observed: Vec<f64>,
    pub mask: Vec<f64>,
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    pub delta_min: Vec<f64>,
    pub delta_max: Vec<f64>,
}

/// Scans each window and variable for its observed extrema (first occurrence
/// wins ties). A variable with nothing observed takes `fallback[d]` as both
/// extrema at distance `L`, or fails when no fallback is given.
/// Values under a zero mask are never read.
pub fn window_extremes(x: &Tensor, mask: &Tensor, fallback: Option<&[f64]>) -> Result<WindowExtremes> {
    let shape = x.shape().to_vec();
    if mask.shape() != shape.as_slice() || shape.len() < 2 {
        return Err(Error::Contract(format!(
            "values {:?} vs mask {:?}",
            shape,
            mask.shape()
        )));
    }
    let (l, d) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if let Some(f) = fallback {
        if f.len() != d {
            return Err(Error::Contract(format!("{} fallback values for {d} variables", f.len())));
        }
    }
    let n = x.numel();
    let windows = n / (l * d).max(1);
    let (xs, ms) = (x.data(), mask.data());
    let mut out = WindowExtremes {
        shape: shape.clone(),
        observed: vec![0.0; n],
        mask: ms.to_vec(),
        x_min: vec![0.0; n],
        x_max: vec![0.0; n],
        delta_min: vec![0.0; n],
        delta_max: vec![0.0; n],
    };
    for w in 0..windows {
        for v in 0..d {
            let at = |t: usize| (w * l + t) * d + v;
            let mut best: Option<((f64, usize), (f64, usize))> = None;
            for t in 0..l {
                let i = at(t);
                if ms[i] == 0.0 {
                    continue;
                }
                if ms[i] != 1.0 {
                    return Err(Error::Contract(format!("mask entry {} is not binary", ms[i])));
                }
                let val = xs[i];
                out.observed[i] = val;
                best = Some(match best {
                    None => ((val, t), (val, t)),
                    Some((lo, hi)) => (
                        if val < lo.0 { (val, t) } else { lo },
                        if val > hi.0 { (val, t) } else { hi },
                    ),
                });
            }
            for t in 0..l {
                let i = at(t);
                match best {
                    Some(((lo, tl), (hi, th))) => {
                        out.x_min[i] = lo;
                        out.x_max[i] = hi;
                        out.delta_min[i] = t.abs_diff(tl) as f64;
                        out.delta_max[i] = t.abs_diff(th) as f64;
                    }
                    None => {
                        let f = fallback.ok_or(Error::DegenerateVariable { variable: v })?;
                        out.x_min[i] = f[v];
                        out.x_max[i] = f[v];
                        out.delta_min[i] = l as f64;
                        out.delta_max[i] = l as f64;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Result of the tape computation, with the mixing weights exposed.
pub struct LocalStats {
    pub z: Var,
    pub omega1: Var,
    pub omega2: Var,
}

/// Builds `Z` on the tape from precomputed extremes and the bound decay
/// weights under `prefix`.
pub fn local_stats(tape: &mut Tape, bind: &Binding, prefix: &str, ex: &WindowExtremes) -> Result<LocalStats> {
    let [w1, b1, w2, b2] = decay_names(prefix);
    let shape = ex.shape.clone();
    let konst = |tape: &mut Tape, v: &[f64]| tape.constant(Tensor::new(&shape, v.to_vec()).unwrap());
    let dmin = konst(tape, &ex.delta_min);
    let dmax = konst(tape, &ex.delta_max);

    let a1 = tape.mul(dmin, bind.get(&w1)?)?;
    let a1 = tape.add(a1, bind.get(&b1)?)?;
    let a1 = tape.relu(a1)?;
    let a2 = tape.mul(dmax, bind.get(&w2)?)?;
    let a2 = tape.add(a2, bind.get(&b2)?)?;
    let a2 = tape.relu(a2)?;

    // softmax(−a1, −a2) over a trailing pair axis gives (Ω1′, Ω2′).
    let mut pair = shape.clone();
    pair.push(1);
    let a1 = tape.reshape(a1, &pair)?;
    let a2 = tape.reshape(a2, &pair)?;
    let logits = tape.concat(&[a1, a2], shape.len())?;
    let logits = tape.scale(logits, -1.0)?;
    let omega = tape.softmax(logits, shape.len())?;

    let mut ext = Vec::with_capacity(2 * ex.x_min.len());
    for (lo, hi) in ex.x_min.iter().zip(&ex.x_max) {
        ext.push(*lo);
        ext.push(*hi);
    }
    let mut ext_shape = shape.clone();
    ext_shape.push(2);
    let ext = tape.constant(Tensor::new(&ext_shape, ext)?);
    let fill = tape.mul(omega, ext)?;
    let fill = tape.sum_axis(fill, shape.len())?;

    let missing: Vec<f64> = ex.mask.iter().map(|m| 1.0 - m).collect();
    let missing = konst(tape, &missing);
    let fill = tape.mul(fill, missing)?;
    let observed = konst(tape, &ex.observed);
    let z = tape.add(observed, fill)?;

    let o1 = tape.slice(omega, shape.len(), 0, 1)?;
    let o1 = tape.reshape(o1, &shape)?;
    let o2 = tape.slice(omega, shape.len(), 1, 1)?;
    let o2 = tape.reshape(o2, &shape)?;
    Ok(LocalStats { z, omega1: o1, omega2: o2 })
}
