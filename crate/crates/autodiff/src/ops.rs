//! Forward primitives. Each validates shapes, computes its value, and records
//! the node the adjoint needs.

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::kernels::{gemm_acc, suffix_repeat, transpose_last2};
use crate::tape::{flip_buf, gemm, CustomOp, Op, Tape, Var, L2_EPS};
use crate::tensor::{axis_extents, Tensor};

impl Tape {
    fn binary_broadcast(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Tensor, usize, usize)> {
        self.check(a)?;
        self.check(b)?;
        let (at, bt) = (self.value(a), self.value(b));
        if suffix_repeat(at.shape(), bt.shape()).is_none() {
            return shape_err(op, format!("{:?} vs {:?}", at.shape(), bt.shape()));
        }
        let nb = bt.numel();
        let mut data = Vec::with_capacity(at.numel());
        for chunk in at.data().chunks(nb.max(1)) {
            data.extend(chunk.iter().zip(bt.data()).map(|(&x, &y)| f(x, y)));
        }
        Ok((Tensor::from_parts(at.shape().to_vec(), data), a.0, b.0))
    }

    /// Elementwise `a + b`; `b` may be a trailing-shape suffix of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = if self.value(a).rank() < self.value(b).rank() {
            (b, a)
        } else {
            (a, b)
        };
        let (t, a, b) = self.binary_broadcast("add", a, b, |x, y| x + y)?;
        self.push(t, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, a, b) = self.binary_broadcast("sub", a, b, |x, y| x - y)?;
        self.push(t, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = if self.value(a).rank() < self.value(b).rank() {
            (b, a)
        } else {
            (a, b)
        };
        let (t, a, b) = self.binary_broadcast("mul", a, b, |x, y| x * y)?;
        self.push(t, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.check(a)?;
        let t = self.value(a).map(|v| v * c);
        self.push(t, Op::Scale(a.0, c))
    }

    /// `[.., K] × [K, N]`, or batched `[.., M, K] × [.., K, N]` with equal
    /// leading dimensions.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (at, bt) = (self.value(a), self.value(b));
        let (sa, sb) = (at.shape(), bt.shape());
        if sb.len() == 2 {
            let (k, n) = (sb[0], sb[1]);
            if sa.is_empty() || sa[sa.len() - 1] != k {
                return shape_err("matmul", format!("{sa:?} × {sb:?}"));
            }
            let m = at.numel() / k;
            let data = gemm(at.data(), bt.data(), m, k, n);
            let mut shape = sa.to_vec();
            *shape.last_mut().unwrap() = n;
            return self.push(Tensor::from_parts(shape, data), Op::MatMul(a.0, b.0));
        }
        let r = sa.len();
        if r < 3 || sb.len() != r || sa[..r - 2] != sb[..r - 2] || sa[r - 1] != sb[r - 2] {
            return shape_err("matmul", format!("{sa:?} × {sb:?}"));
        }
        let (m, k, n) = (sa[r - 2], sa[r - 1], sb[r - 1]);
        let batch = at.numel() / (m * k);
        let mut data = vec![0.0; batch * m * n];
        for i in 0..batch {
            gemm_acc(
                &at.data()[i * m * k..(i + 1) * m * k],
                &bt.data()[i * k * n..(i + 1) * k * n],
                &mut data[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let mut shape = sa.to_vec();
        shape[r - 1] = n;
        self.push(Tensor::from_parts(shape, data), Op::BatchMatMul(a.0, b.0))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let t = self.value(a).map(|v| v.max(0.0));
        self.push(t, Op::Relu(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let t = self.value(a).map(f64::exp);
        self.push(t, Op::Exp(a.0))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check(a)?;
        let x = self.value(a);
        if axis >= x.rank() {
            return shape_err("softmax", format!("axis {axis} on {:?}", x.shape()));
        }
        let (outer, len, inner) = axis_extents(x.shape(), axis);
        let xd = x.data();
        let mut y = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let max = (0..len).map(|j| xd[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (xd[at(j)] - max).exp();
                    y[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    y[at(j)] /= total;
                }
            }
        }
        let t = Tensor::from_parts(x.shape().to_vec(), y);
        self.push(t, Op::Softmax(a.0, axis))
    }

    /// Normalizes the last axis to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        self.check(a)?;
        let x = self.value(a);
        let Some(&n) = x.shape().last() else {
            return shape_err("layer_norm", "scalar input");
        };
        let rows = x.numel() / n;
        let mut xhat = vec![0.0; x.numel()];
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &x.data()[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let s = 1.0 / (var + eps).sqrt();
            for j in 0..n {
                xhat[r * n + j] = (row[j] - mean) * s;
            }
            inv_std.push(s);
        }
        let t = Tensor::from_parts(x.shape().to_vec(), xhat.clone());
        self.push(
            t,
            Op::LayerNorm {
                x: a.0,
                xhat,
                inv_std,
            },
        )
    }

    /// Causal 1-D convolution along time: `x [.., T, Cin]`, `w [K, Cin, Cout]`,
    /// `out[t] = Σ_j x[t-(K-1)+j] · w[j]` with zero left padding.
    pub fn conv1d(&mut self, x: Var, w: Var) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        let (xt, wt) = (self.value(x), self.value(w));
        let (sx, sw) = (xt.shape(), wt.shape());
        if sx.len() < 2 || sw.len() != 3 || sx[sx.len() - 1] != sw[1] {
            return shape_err("conv1d", format!("input {sx:?}, kernel {sw:?}"));
        }
        let (k, cin, cout) = (sw[0], sw[1], sw[2]);
        let t_len = sx[sx.len() - 2];
        let batch = xt.numel() / (t_len * cin);
        let mut out = vec![0.0; batch * t_len * cout];
        for b in 0..batch {
            for j in 0..k {
                let shift = k - 1 - j;
                if shift >= t_len {
                    continue;
                }
                let rows = t_len - shift;
                let xs = b * t_len * cin;
                let os = (b * t_len + shift) * cout;
                gemm_acc(
                    &xt.data()[xs..xs + rows * cin],
                    &wt.data()[j * cin * cout..(j + 1) * cin * cout],
                    &mut out[os..os + rows * cout],
                    rows,
                    cin,
                    cout,
                );
            }
        }
        let mut shape = sx.to_vec();
        *shape.last_mut().unwrap() = cout;
        self.push(Tensor::from_parts(shape, out), Op::Conv1d { x: x.0, w: w.0 })
    }

    fn reduce_axis(&mut self, a: Var, axis: usize, mean: bool) -> Result<Var> {
        self.check(a)?;
        let x = self.value(a);
        if axis >= x.rank() {
            return shape_err("reduce", format!("axis {axis} on {:?}", x.shape()));
        }
        let (outer, len, inner) = axis_extents(x.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let src = &x.data()[o * len * inner + j * inner..o * len * inner + (j + 1) * inner];
                for (d, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += v;
                }
            }
        }
        if mean {
            out.iter_mut().for_each(|v| *v /= len as f64);
        }
        let mut shape = x.shape().to_vec();
        shape.remove(axis);
        let op = if mean {
            Op::MeanAxis(a.0, axis)
        } else {
            Op::SumAxis(a.0, axis)
        };
        self.push(Tensor::from_parts(shape, out), op)
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(a, axis, false)
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(a, axis, true)
    }

    /// Sum of all entries as a scalar.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::SumAll(a.0))
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel() as f64;
        let s = self.sum_all(a)?;
        self.scale(s, 1.0 / n)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("concat", "no inputs");
        };
        for &p in parts {
            self.check(p)?;
        }
        let base = self.value(first).shape().to_vec();
        if axis >= base.len() {
            return shape_err("concat", format!("axis {axis} on {base:?}"));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            let same = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !same {
                return shape_err("concat", format!("{s:?} vs {base:?} on axis {axis}"));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_extents(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let len = t.shape()[axis];
                data.extend_from_slice(&t.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push(
            Tensor::from_parts(shape, data),
            Op::Concat {
                parts: parts.iter().map(|v| v.0).collect(),
                axis,
            },
        )
    }

    /// Entries `start..start+len` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check(a)?;
        let x = self.value(a);
        if axis >= x.rank() || start + len > x.shape()[axis] {
            return shape_err(
                "slice",
                format!("{start}..{} on axis {axis} of {:?}", start + len, x.shape()),
            );
        }
        let (outer, full, inner) = axis_extents(x.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = o * full * inner + start * inner;
            data.extend_from_slice(&x.data()[s..s + len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        self.push(
            Tensor::from_parts(shape, data),
            Op::Slice {
                x: a.0,
                axis,
                start,
            },
        )
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let x = self.value(a);
        let r = x.rank();
        if r < 2 {
            return shape_err("transpose", format!("rank {r}"));
        }
        let (rows, cols) = (x.shape()[r - 2], x.shape()[r - 1]);
        let batch = x.numel() / (rows * cols).max(1);
        let data = transpose_last2(x.data(), batch, rows, cols);
        let mut shape = x.shape().to_vec();
        shape.swap(r - 2, r - 1);
        self.push(Tensor::from_parts(shape, data), Op::Transpose(a.0))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.check(a)?;
        let x = self.value(a);
        if shape.iter().product::<usize>() != x.numel() {
            return shape_err("reshape", format!("{:?} -> {shape:?}", x.shape()));
        }
        let t = Tensor::from_parts(shape.to_vec(), x.data().to_vec());
        self.push(t, Op::Reshape(a.0))
    }

    /// Reverses the order of entries along `axis`.
    pub fn flip(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check(a)?;
        let x = self.value(a);
        if axis >= x.rank() {
            return shape_err("flip", format!("axis {axis} on {:?}", x.shape()));
        }
        let (outer, len, inner) = axis_extents(x.shape(), axis);
        let t = Tensor::from_parts(x.shape().to_vec(), flip_buf(x.data(), outer, len, inner));
        self.push(t, Op::Flip(a.0, axis))
    }

    /// FFT-based circular convolution along the last axis. `b` may be a
    /// trailing-shape suffix of `a` (one kernel row shared across the batch).
    pub fn circular_conv(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        if sa.is_empty() || suffix_repeat(&sa, &sb).is_none() {
            return shape_err("circ_conv", format!("{sa:?} vs {sb:?}"));
        }
        let n = sa[sa.len() - 1];
        let data = {
            let (ad, bd) = (
                self.nodes[a.0].value.data().to_vec(),
                self.nodes[b.0].value.data().to_vec(),
            );
            self.fft.circular_rows(&ad, &bd, n, false)
        };
        self.push(Tensor::from_parts(sa, data), Op::CircConv(a.0, b.0))
    }

    /// Delay embedding: `x [.., T, F]` → `[.., T, window, F]`, where slot `j`
    /// of step `t` holds row `t - window + 1 + j`, clamped to the first row.
    pub fn delay_embed(&mut self, x: Var, window: usize) -> Result<Var> {
        self.check(x)?;
        let xt = self.value(x);
        let r = xt.rank();
        if r < 2 || window == 0 {
            return shape_err("delay_embed", format!("{:?}, window {window}", xt.shape()));
        }
        let (t_len, f) = (xt.shape()[r - 2], xt.shape()[r - 1]);
        let batch = xt.numel() / (t_len * f).max(1);
        let mut data = Vec::with_capacity(xt.numel() * window);
        for b in 0..batch {
            for t in 0..t_len {
                for j in 0..window {
                    let src = (t + j + 1).saturating_sub(window);
                    let o = (b * t_len + src) * f;
                    data.extend_from_slice(&xt.data()[o..o + f]);
                }
            }
        }
        let mut shape = xt.shape()[..r - 1].to_vec();
        shape.push(window);
        shape.push(f);
        self.push(Tensor::from_parts(shape, data), Op::DelayEmbed { x: x.0, window })
    }

    /// Valid sliding windows of `width` rows: `x [.., S, F]` → `[.., S-width+1, width*F]`.
    pub fn unfold(&mut self, x: Var, width: usize) -> Result<Var> {
        self.check(x)?;
        let xt = self.value(x);
        let r = xt.rank();
        if r < 2 || width == 0 || width > xt.shape()[r - 2] {
            return shape_err("unfold", format!("{:?}, width {width}", xt.shape()));
        }
        let (s_len, f) = (xt.shape()[r - 2], xt.shape()[r - 1]);
        let t_out = s_len - width + 1;
        let batch = xt.numel() / (s_len * f).max(1);
        let mut data = Vec::with_capacity(batch * t_out * width * f);
        for b in 0..batch {
            for c in 0..t_out {
                let o = (b * s_len + c) * f;
                data.extend_from_slice(&xt.data()[o..o + width * f]);
            }
        }
        let mut shape = xt.shape()[..r - 2].to_vec();
        shape.push(t_out);
        shape.push(width * f);
        self.push(Tensor::from_parts(shape, data), Op::Unfold { x: x.0, width })
    }

    /// Picks `k` entries per row of the last axis: `index` holds `rows * k`
    /// column indices in row-major order.
    pub fn gather_last(&mut self, x: Var, index: &[usize], k: usize) -> Result<Var> {
        self.check(x)?;
        let xt = self.value(x);
        let Some(&j_len) = xt.shape().last() else {
            return shape_err("gather_last", "scalar input");
        };
        let rows = xt.numel() / j_len.max(1);
        if index.len() != rows * k || index.iter().any(|&i| i >= j_len) {
            return shape_err(
                "gather_last",
                format!("{} indices for {rows} rows × {k} over width {j_len}", index.len()),
            );
        }
        let data = index
            .iter()
            .enumerate()
            .map(|(p, &i)| xt.data()[(p / k) * j_len + i])
            .collect();
        let mut shape = xt.shape().to_vec();
        *shape.last_mut().unwrap() = k;
        self.push(
            Tensor::from_parts(shape, data),
            Op::GatherLast {
                x: x.0,
                index: index.to_vec(),
            },
        )
    }

    /// Scales each row of the last axis to unit L2 norm (rows with norm below
    /// 1e-12 are divided by 1e-12 instead).
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let xt = self.value(x);
        let Some(&n) = xt.shape().last() else {
            return shape_err("l2_normalize", "scalar input");
        };
        let rows = xt.numel() / n.max(1);
        let mut norms = Vec::with_capacity(rows);
        let mut data = Vec::with_capacity(xt.numel());
        for r in 0..rows {
            let row = &xt.data()[r * n..(r + 1) * n];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let d = norm.max(L2_EPS);
            data.extend(row.iter().map(|v| v / d));
            norms.push(norm);
        }
        let t = Tensor::from_parts(xt.shape().to_vec(), data);
        self.push(t, Op::L2Normalize { x: x.0, norms })
    }

    /// Inverted dropout; the identity outside training mode or at rate 0.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        self.check(x)?;
        if !self.training || rate <= 0.0 {
            return Ok(x);
        }
        if rate >= 1.0 {
            return shape_err("dropout", format!("rate {rate} must be < 1"));
        }
        let keep = 1.0 - rate;
        let n = self.value(x).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if self.rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let xt = self.value(x);
        let data = xt.data().iter().zip(&mask).map(|(a, b)| a * b).collect();
        let t = Tensor::from_parts(xt.shape().to_vec(), data);
        self.push(t, Op::Dropout { x: x.0, mask })
    }

    /// Records a caller-computed `output` whose adjoint is `op.vjp`.
    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: &[Var], output: Tensor) -> Result<Var> {
        for &v in inputs {
            self.check(v)?;
        }
        self.push(
            output,
            Op::Custom {
                inputs: inputs.iter().map(|v| v.0).collect(),
                op,
            },
        )
    }
}
