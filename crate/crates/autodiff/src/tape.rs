//! Define-by-run tape: every forward primitive appends a node holding its
//! value and whatever the adjoint needs; `backward` walks the nodes in reverse.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TensorError};
use crate::fft::FftCache;
use crate::kernels::{
    gemm_a_bt_acc, gemm_acc, gemm_at_b_acc, reduce_repeats, transpose_last2,
};
use crate::tensor::{axis_extents, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A primitive whose forward value is computed by the caller and whose
/// vector-Jacobian product is supplied here.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    /// One gradient per input, each shaped like that input.
    fn vjp(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor>;
}

pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MatMul(usize, usize),
    BatchMatMul(usize, usize),
    Relu(usize),
    Exp(usize),
    Softmax(usize, usize),
    LayerNorm {
        x: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Conv1d {
        x: usize,
        w: usize,
    },
    SumAxis(usize, usize),
    MeanAxis(usize, usize),
    SumAll(usize),
    Concat {
        parts: Vec<usize>,
        axis: usize,
    },
    Slice {
        x: usize,
        axis: usize,
        start: usize,
    },
    Transpose(usize),
    Reshape(usize),
    Flip(usize, usize),
    CircConv(usize, usize),
    DelayEmbed {
        x: usize,
        window: usize,
    },
    Unfold {
        x: usize,
        width: usize,
    },
    GatherLast {
        x: usize,
        index: Vec<usize>,
    },
    L2Normalize {
        x: usize,
        norms: Vec<f64>,
    },
    Dropout {
        x: usize,
        mask: Vec<f64>,
    },
    Custom {
        inputs: Vec<usize>,
        op: Box<dyn CustomOp>,
    },
}

impl Op {
    fn parents(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) | BatchMatMul(a, b)
            | CircConv(a, b) => vec![*a, *b],
            Scale(a, _) | Relu(a) | Exp(a) | Softmax(a, _) | SumAxis(a, _) | MeanAxis(a, _)
            | SumAll(a) | Transpose(a) | Reshape(a) | Flip(a, _) => vec![*a],
            LayerNorm { x, .. }
            | Slice { x, .. }
            | DelayEmbed { x, .. }
            | Unfold { x, .. }
            | GatherLast { x, .. }
            | L2Normalize { x, .. }
            | Dropout { x, .. } => vec![*x],
            Conv1d { x, w } => vec![*x, *w],
            Concat { parts, .. } => parts.clone(),
            Custom { inputs, .. } => inputs.clone(),
        }
    }

    fn name(&self) -> &'static str {
        use Op::*;
        match self {
            Leaf => "leaf",
            Add(..) => "add",
            Sub(..) => "sub",
            Mul(..) => "mul",
            Scale(..) => "scale",
            MatMul(..) => "matmul",
            BatchMatMul(..) => "bmm",
            Relu(..) => "relu",
            Exp(..) => "exp",
            Softmax(..) => "softmax",
            LayerNorm { .. } => "layer_norm",
            Conv1d { .. } => "conv1d",
            SumAxis(..) => "sum_axis",
            MeanAxis(..) => "mean_axis",
            SumAll(..) => "sum_all",
            Concat { .. } => "concat",
            Slice { .. } => "slice",
            Transpose(..) => "transpose",
            Reshape(..) => "reshape",
            Flip(..) => "flip",
            CircConv(..) => "circ_conv",
            DelayEmbed { .. } => "delay_embed",
            Unfold { .. } => "unfold",
            GatherLast { .. } => "gather_last",
            L2Normalize { .. } => "l2_normalize",
            Dropout { .. } => "dropout",
            Custom { op, .. } => op.name(),
        }
    }
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Append-only computation record.
///
/// A tape is built fresh for every forward pass and confined to one thread.
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    pub(crate) training: bool,
    pub(crate) rng: ChaCha8Rng,
    pub(crate) fft: FftCache,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// Inference-mode tape: dropout is the identity.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            training: false,
            rng: ChaCha8Rng::seed_from_u64(0),
            fft: FftCache::new(),
        }
    }

    /// Training-mode tape whose dropout masks are drawn from `seed`.
    pub fn training(seed: u64) -> Self {
        Self {
            training: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ..Self::new()
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf; it participates in backward iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let requires_grad = t.requires_grad();
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_grad(false))
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_grad(true))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(TensorError::UnknownVar(v.0))
        }
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        let requires_grad = op.parents().iter().any(|&p| self.nodes[p].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value: value.with_grad(false),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        self.check(loss)?;
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.numel() != 1 {
            return Err(TensorError::NotScalar(loss_value.shape().to_vec()));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..n).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let contributions = self.vjp(idx, &g);
            for (parent, pg) in contributions {
                if !self.nodes[parent].requires_grad {
                    continue;
                }
                match &mut grads[parent] {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(pg),
                }
            }
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn vjp(&mut self, idx: usize, g: &[f64]) -> Vec<(usize, Vec<f64>)> {
        let nodes = &self.nodes;
        let fft = &mut self.fft;
        let val = |i: usize| &nodes[i].value;
        let wants = |i: usize| nodes[i].requires_grad;
        let out = &nodes[idx].value;
        match &nodes[idx].op {
            Op::Leaf => vec![],
            Op::Add(a, b) => {
                let nb = val(*b).numel();
                vec![(*a, g.to_vec()), (*b, reduce_repeats(g, nb))]
            }
            Op::Sub(a, b) => {
                let nb = val(*b).numel();
                let gb = reduce_repeats(g, nb).into_iter().map(|v| -v).collect();
                vec![(*a, g.to_vec()), (*b, gb)]
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                let nb = bv.len();
                let mut res = Vec::new();
                if wants(*a) {
                    let mut ga = Vec::with_capacity(g.len());
                    for gc in g.chunks(nb.max(1)) {
                        ga.extend(gc.iter().zip(bv).map(|(x, y)| x * y));
                    }
                    res.push((*a, ga));
                }
                if wants(*b) {
                    let mut gb = vec![0.0; nb];
                    for (gc, ac) in g.chunks(nb.max(1)).zip(av.chunks(nb.max(1))) {
                        for ((o, x), y) in gb.iter_mut().zip(gc).zip(ac) {
                            *o += x * y;
                        }
                    }
                    res.push((*b, gb));
                }
                res
            }
            Op::Scale(a, c) => vec![(*a, g.iter().map(|v| v * c).collect())],
            Op::MatMul(a, b) => {
                let (at, bt) = (val(*a), val(*b));
                let (k, n) = (bt.shape()[0], bt.shape()[1]);
                let m = at.numel() / k;
                let mut res = Vec::new();
                if wants(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm_a_bt_acc(g, bt.data(), &mut ga, m, k, n);
                    res.push((*a, ga));
                }
                if wants(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm_at_b_acc(at.data(), g, &mut gb, m, k, n);
                    res.push((*b, gb));
                }
                res
            }
            Op::BatchMatMul(a, b) => {
                let (at, bt) = (val(*a), val(*b));
                let r = at.rank();
                let (m, k, n) = (at.shape()[r - 2], at.shape()[r - 1], bt.shape()[r - 1]);
                let batch = at.numel() / (m * k);
                let mut ga = vec![0.0; at.numel()];
                let mut gb = vec![0.0; bt.numel()];
                for i in 0..batch {
                    let gs = &g[i * m * n..(i + 1) * m * n];
                    let asl = &at.data()[i * m * k..(i + 1) * m * k];
                    let bsl = &bt.data()[i * k * n..(i + 1) * k * n];
                    gemm_a_bt_acc(gs, bsl, &mut ga[i * m * k..(i + 1) * m * k], m, k, n);
                    gemm_at_b_acc(asl, gs, &mut gb[i * k * n..(i + 1) * k * n], m, k, n);
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::Relu(a) => {
                let x = val(*a).data();
                vec![(
                    *a,
                    g.iter()
                        .zip(x)
                        .map(|(gi, xi)| if *xi > 0.0 { *gi } else { 0.0 })
                        .collect(),
                )]
            }
            Op::Exp(a) => vec![(*a, g.iter().zip(out.data()).map(|(gi, yi)| gi * yi).collect())],
            Op::Softmax(a, axis) => {
                let (outer, len, inner) = axis_extents(out.shape(), *axis);
                let y = out.data();
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| o * len * inner + j * inner + i;
                        let dot: f64 = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                        for j in 0..len {
                            gx[at(j)] = y[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
                vec![(*a, gx)]
            }
            Op::LayerNorm { x, xhat, inv_std } => {
                let n = *val(*x).shape().last().unwrap();
                let mut gx = vec![0.0; g.len()];
                for (r, s) in inv_std.iter().enumerate() {
                    let gr = &g[r * n..(r + 1) * n];
                    let xr = &xhat[r * n..(r + 1) * n];
                    let mean_g = gr.iter().sum::<f64>() / n as f64;
                    let mean_gx = gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for j in 0..n {
                        gx[r * n + j] = s * (gr[j] - mean_g - xr[j] * mean_gx);
                    }
                }
                vec![(*x, gx)]
            }
            Op::Conv1d { x, w } => {
                let (xt, wt) = (val(*x), val(*w));
                let (k, cin, cout) = (wt.shape()[0], wt.shape()[1], wt.shape()[2]);
                let t_len = xt.shape()[xt.rank() - 2];
                let batch = xt.numel() / (t_len * cin);
                let mut gx = vec![0.0; xt.numel()];
                let mut gw = vec![0.0; wt.numel()];
                for b in 0..batch {
                    for j in 0..k {
                        let shift = k - 1 - j;
                        if shift >= t_len {
                            continue;
                        }
                        let rows = t_len - shift;
                        let xs = b * t_len * cin;
                        let gs = (b * t_len + shift) * cout;
                        let wj = &wt.data()[j * cin * cout..(j + 1) * cin * cout];
                        gemm_a_bt_acc(
                            &g[gs..gs + rows * cout],
                            wj,
                            &mut gx[xs..xs + rows * cin],
                            rows,
                            cin,
                            cout,
                        );
                        gemm_at_b_acc(
                            &xt.data()[xs..xs + rows * cin],
                            &g[gs..gs + rows * cout],
                            &mut gw[j * cin * cout..(j + 1) * cin * cout],
                            rows,
                            cin,
                            cout,
                        );
                    }
                }
                vec![(*x, gx), (*w, gw)]
            }
            Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
                let (outer, len, inner) = axis_extents(val(*a).shape(), *axis);
                let scale = if matches!(nodes[idx].op, Op::MeanAxis(..)) {
                    1.0 / len as f64
                } else {
                    1.0
                };
                let mut gx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for j in 0..len {
                        for i in 0..inner {
                            gx[o * len * inner + j * inner + i] = g[o * inner + i] * scale;
                        }
                    }
                }
                vec![(*a, gx)]
            }
            Op::SumAll(a) => vec![(*a, vec![g[0]; val(*a).numel()])],
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = axis_extents(out.shape(), *axis);
                let mut res = Vec::new();
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).shape()[*axis];
                    let mut gp = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let s = o * total * inner + offset * inner;
                        gp.extend_from_slice(&g[s..s + len * inner]);
                    }
                    res.push((p, gp));
                    offset += len;
                }
                res
            }
            Op::Slice { x, axis, start } => {
                let (outer, len, inner) = axis_extents(val(*x).shape(), *axis);
                let take = out.shape()[*axis];
                let mut gx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    let d = o * len * inner + start * inner;
                    gx[d..d + take * inner]
                        .copy_from_slice(&g[o * take * inner..(o + 1) * take * inner]);
                }
                vec![(*x, gx)]
            }
            Op::Transpose(a) => {
                let s = out.shape();
                let r = s.len();
                let (rows, cols) = (s[r - 2], s[r - 1]);
                let batch = out.numel() / (rows * cols);
                vec![(*a, transpose_last2(g, batch, rows, cols))]
            }
            Op::Reshape(a) => vec![(*a, g.to_vec())],
            Op::Flip(a, axis) => {
                let (outer, len, inner) = axis_extents(out.shape(), *axis);
                vec![(*a, flip_buf(g, outer, len, inner))]
            }
            Op::CircConv(a, b) => {
                let (at, bt) = (val(*a), val(*b));
                let n = *at.shape().last().unwrap();
                let mut res = Vec::new();
                if wants(*a) {
                    res.push((*a, fft.circular_rows(g, bt.data(), n, true)));
                }
                if wants(*b) {
                    let full = fft.circular_rows(g, at.data(), n, true);
                    res.push((*b, reduce_repeats(&full, bt.numel())));
                }
                res
            }
            Op::DelayEmbed { x, window } => {
                let xs = val(*x).shape();
                let r = xs.len();
                let (t_len, f) = (xs[r - 2], xs[r - 1]);
                let batch = val(*x).numel() / (t_len * f);
                let mut gx = vec![0.0; val(*x).numel()];
                for b in 0..batch {
                    for t in 0..t_len {
                        for j in 0..*window {
                            let src = (t + j + 1).saturating_sub(*window);
                            let go = ((b * t_len + t) * window + j) * f;
                            let xo = (b * t_len + src) * f;
                            for c in 0..f {
                                gx[xo + c] += g[go + c];
                            }
                        }
                    }
                }
                vec![(*x, gx)]
            }
            Op::Unfold { x, width } => {
                let xs = val(*x).shape();
                let r = xs.len();
                let (s_len, f) = (xs[r - 2], xs[r - 1]);
                let t_out = s_len - width + 1;
                let batch = val(*x).numel() / (s_len * f);
                let mut gx = vec![0.0; val(*x).numel()];
                for b in 0..batch {
                    for c in 0..t_out {
                        let go = (b * t_out + c) * width * f;
                        let xo = (b * s_len + c) * f;
                        for (i, gv) in g[go..go + width * f].iter().enumerate() {
                            gx[xo + i] += gv;
                        }
                    }
                }
                vec![(*x, gx)]
            }
            Op::GatherLast { x, index } => {
                let j_len = *val(*x).shape().last().unwrap();
                let k = *out.shape().last().unwrap();
                let mut gx = vec![0.0; val(*x).numel()];
                for (pos, (&ix, gv)) in index.iter().zip(g).enumerate() {
                    gx[(pos / k) * j_len + ix] += gv;
                }
                vec![(*x, gx)]
            }
            Op::L2Normalize { x, norms } => {
                let n = *out.shape().last().unwrap();
                let y = out.data();
                let mut gx = vec![0.0; y.len()];
                for (r, &norm) in norms.iter().enumerate() {
                    let yr = &y[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    if norm > L2_EPS {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            gx[r * n + j] = (gr[j] - yr[j] * dot) / norm;
                        }
                    } else {
                        for j in 0..n {
                            gx[r * n + j] = gr[j] / L2_EPS;
                        }
                    }
                }
                vec![(*x, gx)]
            }
            Op::Dropout { x, mask } => {
                vec![(*x, g.iter().zip(mask).map(|(a, b)| a * b).collect())]
            }
            Op::Custom { inputs, op } => {
                let ins: Vec<&Tensor> = inputs.iter().map(|&i| val(i)).collect();
                let grad = Tensor::from_parts(out.shape().to_vec(), g.to_vec());
                let gs = op.vjp(&ins, out, &grad);
                debug_assert_eq!(gs.len(), inputs.len());
                inputs
                    .iter()
                    .zip(gs)
                    .map(|(&i, t)| (i, t.into_data()))
                    .collect()
            }
        }
    }

    /// Indented text rendering of the tape, one node per line.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let mut depth = vec![0usize; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            let parents = node.op.parents();
            depth[i] = parents.iter().map(|&p| depth[p] + 1).max().unwrap_or(0);
            let _ = writeln!(
                s,
                "{:indent$}#{i} {} {:?}{}{}",
                "",
                node.op.name(),
                node.value.shape(),
                if parents.is_empty() {
                    String::new()
                } else {
                    format!(" <- {parents:?}")
                },
                if node.requires_grad { " [grad]" } else { "" },
                indent = 2 * depth[i].min(32),
            );
        }
        s
    }
}

pub(crate) const L2_EPS: f64 = 1e-12;

pub(crate) fn flip_buf(x: &[f64], outer: usize, len: usize, inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for j in 0..len {
            let src = o * len * inner + j * inner;
            let dst = o * len * inner + (len - 1 - j) * inner;
            out[dst..dst + inner].copy_from_slice(&x[src..src + inner]);
        }
    }
    out
}

pub(crate) fn gemm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    gemm_acc(a, b, &mut out, m, k, n);
    out
}

/// Gradients from one reverse sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// ∂loss/∂v; zeros when `v` did not contribute to the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => {
                let n = shape.iter().product();
                Tensor::from_parts(shape, vec![0.0; n])
            }
        }
    }

    /// True when some gradient reached `v`.
    pub fn reached(&self, v: Var) -> bool {
        self.grads.get(v.0).is_some_and(|g| g.is_some())
    }
}
