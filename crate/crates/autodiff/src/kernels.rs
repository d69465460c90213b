//! Raw numeric loops shared by forward and adjoint code.

/// Products below this many multiply-adds skip the packed kernel.
const SMALL: usize = 4096;

/// `a (m×k) · b (k×n)` accumulated into `out (m×n)`.
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    if m * k * n < SMALL {
        for i in 0..m {
            let dst = &mut out[i * n..(i + 1) * n];
            for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
                for (d, &bv) in dst.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                    *d += av * bv;
                }
            }
        }
        return;
    }
    strided(m, k, n, (a, k, 1), (b, n, 1), (out, n, 1));
}

/// `g (m×n) · bᵀ` where `b` is `k×n`, accumulated into `out (m×k)`.
pub(crate) fn gemm_a_bt_acc(g: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    if m * k * n < SMALL {
        for i in 0..m {
            let grow = &g[i * n..(i + 1) * n];
            for p in 0..k {
                let dot: f64 = grow.iter().zip(&b[p * n..(p + 1) * n]).map(|(x, y)| x * y).sum();
                out[i * k + p] += dot;
            }
        }
        return;
    }
    strided(m, n, k, (g, n, 1), (b, 1, n), (out, k, 1));
}

/// `aᵀ · g` where `a` is `m×k` and `g` is `m×n`, accumulated into `out (k×n)`.
pub(crate) fn gemm_at_b_acc(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    if m * k * n < SMALL {
        for i in 0..m {
            let grow = &g[i * n..(i + 1) * n];
            for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
                for (d, &gv) in out[p * n..(p + 1) * n].iter_mut().zip(grow) {
                    *d += av * gv;
                }
            }
        }
        return;
    }
    strided(k, m, n, (a, 1, k), (g, n, 1), (out, n, 1));
}

/// `c += a·b` for an `m×k` by `k×n` product given as (buffer, row stride,
/// column stride).
fn strided(
    m: usize,
    k: usize,
    n: usize,
    a: (&[f64], usize, usize),
    b: (&[f64], usize, usize),
    c: (&mut [f64], usize, usize),
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!(a.0.len() >= m * k && b.0.len() >= k * n && c.0.len() >= m * n);
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1 as isize,
            a.2 as isize,
            b.0.as_ptr(),
            b.1 as isize,
            b.2 as isize,
            1.0,
            c.0.as_mut_ptr(),
            c.1 as isize,
            c.2 as isize,
        );
    }
}

/// Transposes the last two axes of a `[batch, rows, cols]` buffer.
pub(crate) fn transpose_last2(x: &[f64], batch: usize, rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for b in 0..batch {
        let base = b * rows * cols;
        for r in 0..rows {
            for c in 0..cols {
                out[base + c * rows + r] = x[base + r * cols + c];
            }
        }
    }
    out
}

/// Sums `g` (length `rep * n`) over its `rep` leading copies.
pub(crate) fn reduce_repeats(g: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for chunk in g.chunks(n) {
        for (o, v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    out
}

/// Returns how many times `small` repeats to fill `big` when `small` equals a
/// trailing slice of `big` (leading-batch expansion only).
pub(crate) fn suffix_repeat(big: &[usize], small: &[usize]) -> Option<usize> {
    if small.len() > big.len() || big[big.len() - small.len()..] != *small {
        return None;
    }
    Some(big[..big.len() - small.len()].iter().product())
}
