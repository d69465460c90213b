//! Real-sequence FFT helpers built on `rustfft`.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

/// Plan cache for forward/inverse transforms of arbitrary lengths.
pub struct FftCache {
    planner: FftPlanner<f64>,
}

impl Default for FftCache {
    fn default() -> Self {
        Self::new()
    }
}

impl FftCache {
    pub fn new() -> Self {
        Self {
            planner: FftPlanner::new(),
        }
    }

    fn plans(&mut self, n: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
        (
            self.planner.plan_fft_forward(n),
            self.planner.plan_fft_inverse(n),
        )
    }

    pub fn spectrum(&mut self, x: &[f64]) -> Vec<Complex<f64>> {
        let fwd = self.planner.plan_fft_forward(x.len());
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        fwd.process(&mut buf);
        buf
    }

    /// Row-wise circular convolution along the last axis.
    ///
    /// `a` holds `rows_a` rows of length `n`, `b` holds `rows_b` rows, and row
    /// `i` of `a` is paired with row `i % rows_b` of `b`. When `conj_b` is set
    /// the second operand's spectrum is conjugated, which turns the product
    /// into a circular cross-correlation (used by the adjoints).
    pub fn circular_rows(&mut self, a: &[f64], b: &[f64], n: usize, conj_b: bool) -> Vec<f64> {
        let rows_a = a.len() / n;
        let rows_b = b.len() / n;
        let (fwd, inv) = self.plans(n);
        let zero = Complex::new(0.0, 0.0);
        let mut scratch = vec![zero; fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len())];
        let spectra_b: Vec<Vec<Complex<f64>>> = b
            .chunks(n)
            .map(|row| {
                let mut buf: Vec<Complex<f64>> =
                    row.iter().map(|&v| Complex::new(v, 0.0)).collect();
                fwd.process_with_scratch(&mut buf, &mut scratch);
                if conj_b {
                    buf.iter_mut().for_each(|c| *c = c.conj());
                }
                buf
            })
            .collect();
        let scale = 1.0 / n as f64;
        let mut out = Vec::with_capacity(a.len());
        let mut buf = vec![zero; n];
        for r in 0..rows_a {
            let row = &a[r * n..(r + 1) * n];
            for (slot, &v) in buf.iter_mut().zip(row) {
                *slot = Complex::new(v, 0.0);
            }
            fwd.process_with_scratch(&mut buf, &mut scratch);
            let sb = &spectra_b[r % rows_b];
            for (x, y) in buf.iter_mut().zip(sb) {
                *x *= *y;
            }
            inv.process_with_scratch(&mut buf, &mut scratch);
            out.extend(buf.iter().map(|c| c.re * scale));
        }
        out
    }
}

/// Circular convolution of two equal-length real sequences.
pub fn circular_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "circular_convolve length mismatch");
    FftCache::new().circular_rows(a, b, a.len(), false)
}

/// Causal linear convolution truncated to `a.len()`: `y[t] = sum_{i<=t} a[t-i] * b[i]`,
/// computed on zero-padded length-`2L` buffers.
pub fn causal_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "causal_convolve length mismatch");
    let l = a.len();
    let mut pa = a.to_vec();
    pa.resize(2 * l, 0.0);
    let mut pb = b.to_vec();
    pb.resize(2 * l, 0.0);
    let mut y = FftCache::new().circular_rows(&pa, &pb, 2 * l, false);
    y.truncate(l);
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_linear(a: &[f64], b: &[f64]) -> Vec<f64> {
        let l = a.len();
        (0..l)
            .map(|t| (0..=t).map(|i| b[i] * a[t - i]).sum())
            .collect()
    }

    #[test]
    fn circular_matches_definition() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [0.5, -1.0, 0.0, 2.0];
        let got = circular_convolve(&a, &b);
        for (n, g) in got.iter().enumerate() {
            let want: f64 = (0..4).map(|k| a[k] * b[(n + 4 - k) % 4]).sum();
            assert!((g - want).abs() < 1e-12);
        }
    }

    #[test]
    fn causal_matches_direct_loop() {
        let a: Vec<f64> = (0..37).map(|i| ((i * 7) % 11) as f64 / 11.0 - 0.5).collect();
        let b: Vec<f64> = (0..37).map(|i| ((i * 5) % 13) as f64 / 13.0 - 0.5).collect();
        let got = causal_convolve(&a, &b);
        let want = direct_linear(&a, &b);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }
}
