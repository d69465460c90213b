use s4m_autodiff::{Params, Tensor};

use crate::error::{Error, Result};

/// Adam with bias correction, `β = (0.9, 0.999)`, `ε = 1e-8`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: Params,
    pub v: Params,
    /// Steps taken per parameter.
    pub t: std::collections::BTreeMap<String, u64>,
}

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Updates every parameter named in `grads`; others are left alone.
pub fn adam_step(params: &mut Params, grads: &Params, state: &mut AdamState, lr: f64) -> Result<()> {
    for (name, g) in grads.iter() {
        let p = params
            .get(name)
            .ok_or_else(|| Error::Contract(format!("gradient for unknown parameter `{name}`")))?;
        if p.shape() != g.shape() {
            return Err(Error::Contract(format!(
                "gradient of `{name}` has shape {:?}, parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
        let m0 = state.m.get(name).cloned().unwrap_or_else(|| Tensor::zeros(g.shape()));
        let v0 = state.v.get(name).cloned().unwrap_or_else(|| Tensor::zeros(g.shape()));
        let m = m0.zip_map(g, |m, g| BETA1 * m + (1.0 - BETA1) * g)?;
        let v = v0.zip_map(g, |v, g| BETA2 * v + (1.0 - BETA2) * g * g)?;
        let t = state.t.entry(name.to_string()).or_insert(0);
        *t += 1;
        let c1 = 1.0 - BETA1.powi(*t as i32);
        let c2 = 1.0 - BETA2.powi(*t as i32);
        let data: Vec<f64> = p
            .data()
            .iter()
            .zip(m.data().iter().zip(v.data()))
            .map(|(p, (m, v))| p - lr * (m / c1) / ((v / c2).sqrt() + EPS))
            .collect();
        params.insert(name, Tensor::new(p.shape(), data)?);
        state.m.insert(name, m);
        state.v.insert(name, v);
    }
    Ok(())
}
