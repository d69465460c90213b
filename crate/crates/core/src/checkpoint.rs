//! Text checkpoints.
//!
//! ```text
//! s4m-checkpoint 1
//! tensor <name> <rank> <dim>...
//! <values, space separated, shortest round-trip decimal>
//! ...
//! ```
//!
//! Tensors appear in name order, so equal parameter sets give equal files.

use std::fmt::Write as _;
use std::path::Path;

use s4m_autodiff::{Params, Tensor};

use crate::error::{Error, Result};

pub const HEADER: &str = "s4m-checkpoint 1";

pub fn params_to_string(params: &Params) -> String {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    for (name, t) in params.iter() {
        write!(out, "tensor {name} {}", t.rank()).unwrap();
        for d in t.shape() {
            write!(out, " {d}").unwrap();
        }
        out.push('\n');
        let vals: Vec<String> = t.data().iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&vals.join(" "));
        out.push('\n');
    }
    out
}

pub fn params_from_str(text: &str) -> Result<Params> {
    let bad = |line: usize, msg: &str| Error::Data(format!("checkpoint line {line}: {msg}"));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == HEADER => {}
        _ => return Err(bad(1, &format!("expected header `{HEADER}`"))),
    }
    let mut params = Params::new();
    while let Some((i, line)) = lines.next() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        if parts.next() != Some("tensor") {
            return Err(bad(i + 1, "expected `tensor`"));
        }
        let name = parts.next().ok_or_else(|| bad(i + 1, "missing name"))?;
        let nums: std::result::Result<Vec<usize>, _> = parts.map(str::parse).collect();
        let nums = nums.map_err(|_| bad(i + 1, "bad shape"))?;
        let (&rank, dims) = nums.split_first().ok_or_else(|| bad(i + 1, "missing rank"))?;
        if dims.len() != rank {
            return Err(bad(i + 1, "rank does not match dimension count"));
        }
        let (j, vals) = lines.next().ok_or_else(|| bad(i + 2, "missing values"))?;
        let data: std::result::Result<Vec<f64>, _> =
            vals.split_whitespace().map(str::parse).collect();
        let data = data.map_err(|_| bad(j + 1, "bad value"))?;
        let t = Tensor::new(dims, data).map_err(|e| bad(j + 1, &e.to_string()))?;
        params.insert(name, t);
    }
    Ok(params)
}

pub fn save_params(path: &Path, params: &Params) -> Result<()> {
    std::fs::write(path, params_to_string(params))
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_params(path: &Path) -> Result<Params> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    params_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let mut p = Params::new();
        p.insert("block0.ssm.d", Tensor::from_vec(vec![0.1, -1e-300, 3.0e17]));
        p.insert("s", Tensor::scalar(std::f64::consts::PI));
        let text = params_to_string(&p);
        assert!(text.starts_with(HEADER));
        let q = params_from_str(&text).unwrap();
        assert_eq!(params_to_string(&q), text);
        assert_eq!(q.get("s").unwrap().item(), std::f64::consts::PI);
        assert_eq!(q.get("s").unwrap().shape(), &[] as &[usize]);
    }

    #[test]
    fn rejects_wrong_header() {
        assert!(params_from_str("nope\n").is_err());
    }
}
