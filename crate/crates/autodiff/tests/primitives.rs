use proptest::prelude::*;
use s4m_autodiff::{check_gradient, Tape, Tensor, TensorError, Var};

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn seq(shape: &[usize], seed: u64) -> Tensor {
    // Cheap deterministic pseudo-random fill in [-1, 1].
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    Tensor::from_fn(shape, |_| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    })
}

#[test]
fn add_relu_matmul_examples() {
    let mut tape = Tape::new();
    let a = tape.constant(t(&[2], &[1.0, 2.0]));
    let b = tape.constant(t(&[2], &[3.0, 4.0]));
    let s = tape.add(a, b).unwrap();
    assert_eq!(tape.value(s).data(), &[4.0, 6.0]);

    let x = tape.constant(t(&[3], &[-1.0, 0.0, 2.0]));
    let r = tape.relu(x).unwrap();
    assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);

    let eye = tape.constant(Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
    let xm = seq(&[3, 5], 3);
    let xv = tape.constant(xm.clone());
    let p = tape.matmul(eye, xv).unwrap();
    assert_eq!(tape.value(p), &xm);
}

#[test]
fn shape_mismatch_is_descriptive() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 2]));
    let err = tape.matmul(a, b).unwrap_err();
    assert!(matches!(err, TensorError::Shape { op: "matmul", .. }));
    assert!(err.to_string().contains("[2, 3]"));
    assert!(tape.add(a, b).is_err());
}

#[test]
fn non_finite_output_names_the_op() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::from_vec(vec![1000.0]));
    assert_eq!(tape.exp(a).unwrap_err(), TensorError::NonFinite { op: "exp" });
}

#[test]
fn backward_of_sum_of_squares() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[3], &[1.0, 2.0, 3.0]));
    let w = tape.param(t(&[2], &[5.0, 6.0]));
    let sq = tape.mul(x, x).unwrap();
    let loss = tape.sum_all(sq).unwrap();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.wrt(x).data(), &[2.0, 4.0, 6.0]);
    assert_eq!(g.wrt(w).data(), &[0.0, 0.0]);
    assert!(!g.reached(w));
}

#[test]
fn backward_requires_scalar() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[2], &[1.0, 2.0]));
    let y = tape.scale(x, 2.0).unwrap();
    assert_eq!(tape.backward(y).unwrap_err(), TensorError::NotScalar(vec![2]));
}

#[test]
fn backward_is_deterministic() {
    let mut tape = Tape::new();
    let x = tape.param(seq(&[4, 6], 1));
    let w = tape.param(seq(&[6, 3], 2));
    let h = tape.matmul(x, w).unwrap();
    let h = tape.softmax(h, 1).unwrap();
    let loss = tape.sum_all(h).unwrap();
    let a = tape.backward(loss).unwrap();
    let b = tape.backward(loss).unwrap();
    let bits = |t: Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(a.wrt(w)), bits(b.wrt(w)));
    assert_eq!(bits(a.wrt(x)), bits(b.wrt(x)));
}

/// Masked MSE of a two-layer network on a 4×3 input, checked against central
/// differences for every parameter.
#[test]
fn two_layer_masked_mse_matches_finite_differences() {
    let input = seq(&[4, 3], 10);
    let target = seq(&[4, 2], 11);
    let mask = t(&[4, 2], &[1., 0., 1., 1., 0., 1., 1., 1.]);
    let w1 = seq(&[3, 5], 12);
    let b1 = seq(&[5], 13);
    let w2 = seq(&[5, 2], 14);

    let forward = |tape: &mut Tape, w1: Var, b1: Var, w2: Var| -> s4m_autodiff::Result<Var> {
        let x = tape.constant(input.clone());
        let h = tape.matmul(x, w1)?;
        let h = tape.add(h, b1)?;
        let h = tape.relu(h)?;
        let y = tape.matmul(h, w2)?;
        let tgt = tape.constant(target.clone());
        let m = tape.constant(mask.clone());
        let d = tape.sub(y, tgt)?;
        let d = tape.mul(d, m)?;
        let sq = tape.mul(d, d)?;
        let s = tape.sum_all(sq)?;
        tape.scale(s, 1.0 / mask.sum())
    };

    let e1 = check_gradient(
        |tape, v| {
            let (b, w) = (tape.constant(b1.clone()), tape.constant(w2.clone()));
            forward(tape, v, b, w)
        },
        &w1,
        1e-5,
    )
    .unwrap();
    let e2 = check_gradient(
        |tape, v| {
            let (a, w) = (tape.constant(w1.clone()), tape.constant(w2.clone()));
            forward(tape, a, v, w)
        },
        &b1,
        1e-5,
    )
    .unwrap();
    let e3 = check_gradient(
        |tape, v| {
            let (a, b) = (tape.constant(w1.clone()), tape.constant(b1.clone()));
            forward(tape, a, b, v)
        },
        &w2,
        1e-5,
    )
    .unwrap();
    for e in [e1, e2, e3] {
        assert!(e < 1e-5, "relative error {e}");
    }
}

#[test]
fn l2_norm_of_fixed_linear_map() {
    let a_bar = seq(&[3, 3], 20);
    let x0 = seq(&[3], 21);
    let err = check_gradient(
        |tape, x| {
            let a = tape.constant(a_bar.clone());
            let xr = tape.reshape(x, &[1, 3])?;
            let at = tape.transpose(a)?;
            let y = tape.matmul(xr, at)?;
            // ||y|| = <y, y/||y||>
            let n = tape.l2_normalize(y)?;
            let p = tape.mul(y, n)?;
            tape.sum_all(p)
        },
        &x0,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn layout_primitives_forward() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, 4, 1], &[1.0, 2.0, 3.0, 4.0]));
    let d = tape.delay_embed(x, 3).unwrap();
    assert_eq!(tape.shape(d), &[1, 4, 3, 1]);
    assert_eq!(
        tape.value(d).data(),
        &[1., 1., 1., 1., 1., 2., 1., 2., 3., 2., 3., 4.]
    );
    let u = tape.unfold(x, 2).unwrap();
    assert_eq!(tape.shape(u), &[1, 3, 2]);
    assert_eq!(tape.value(u).data(), &[1., 2., 2., 3., 3., 4.]);
    let f = tape.flip(x, 1).unwrap();
    assert_eq!(tape.value(f).data(), &[4., 3., 2., 1.]);
    let g = tape.reshape(x, &[2, 2]).unwrap();
    let gl = tape.gather_last(g, &[1, 1, 0, 0], 2).unwrap();
    assert_eq!(tape.value(gl).data(), &[2., 2., 3., 3.]);
}

#[test]
fn conv1d_is_causal() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[3, 1], &[1.0, 2.0, 3.0]));
    let w = tape.constant(t(&[2, 1, 1], &[10.0, 1.0]));
    let y = tape.conv1d(x, w).unwrap();
    // out[t] = 10·x[t-1] + x[t]
    assert_eq!(tape.value(y).data(), &[1.0, 12.0, 23.0]);
}

#[test]
fn dropout_only_in_training() {
    let mut eval = Tape::new();
    let x = eval.constant(Tensor::ones(&[100]));
    let y = eval.dropout(x, 0.5).unwrap();
    assert_eq!(x, y);

    let mut train = Tape::training(3);
    let x = train.param(Tensor::ones(&[1000]));
    let y = train.dropout(x, 0.25).unwrap();
    let kept = train.value(y).data().iter().filter(|v| **v > 0.0).count();
    assert!((650..850).contains(&kept), "{kept}");
    assert!(train
        .value(y)
        .data()
        .iter()
        .all(|v| *v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-15));
}

#[test]
fn dump_lists_every_node() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::ones(&[2]));
    let y = tape.relu(x).unwrap();
    let _ = tape.sum_all(y).unwrap();
    let d = tape.dump();
    assert_eq!(d.lines().count(), 3);
    assert!(d.contains("relu [2] <- [0] [grad]"));
}

fn direct_linear_conv(a: &[f64], b: &[f64]) -> Vec<f64> {
    (0..a.len())
        .map(|t| (0..=t).map(|i| a[i] * b[t - i]).sum())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fft_convolution_matches_direct(
        a in prop::collection::vec(-1.0f64..1.0, 1..=256),
        seed in 0u64..1000,
    ) {
        let l = a.len();
        let b = seq(&[l], seed).into_data();
        // zero-pad both to 2L and take the first L of the circular result
        let mut tape = Tape::new();
        let mut pa = a.clone();
        pa.resize(2 * l, 0.0);
        let mut pb = b.clone();
        pb.resize(2 * l, 0.0);
        let av = tape.constant(Tensor::from_vec(pa));
        let bv = tape.constant(Tensor::from_vec(pb));
        let c = tape.circular_conv(av, bv).unwrap();
        let want = direct_linear_conv(&a, &b);
        for (g, w) in tape.value(c).data()[..l].iter().zip(&want) {
            prop_assert!((g - w).abs() < 1e-9);
        }
    }

    #[test]
    fn elementwise_and_reduction_gradients(
        rows in 1usize..=8, cols in 1usize..=8, seed in 0u64..10_000,
    ) {
        let x0 = seq(&[rows, cols], seed);
        let other = seq(&[cols], seed + 1);
        let err = check_gradient(|tape, x| {
            let o = tape.constant(other.clone());
            let a = tape.add(x, o)?;
            let m = tape.mul(a, x)?;
            let s = tape.sub(m, o)?;
            let e = tape.exp(s)?;
            let sm = tape.softmax(e, 1)?;
            let r = tape.mean_axis(sm, 0)?;
            let q = tape.mul(r, r)?;
            let ln = tape.layer_norm(x, 1e-5)?;
            let l2 = tape.sum_axis(ln, 1)?;
            let l2 = tape.mul(l2, l2)?;
            let z = tape.sum_all(q)?;
            let z2 = tape.sum_all(l2)?;
            let z2 = tape.scale(z2, 0.1)?;
            tape.add(z, z2)
        }, &x0, 1e-5).unwrap();
        prop_assert!(err < 1e-5, "rel err {}", err);
    }

    #[test]
    fn matmul_and_layout_gradients(
        m in 1usize..=6, k in 1usize..=6, n in 1usize..=6, seed in 0u64..10_000,
    ) {
        let x0 = seq(&[2, m, k], seed);
        let w = seq(&[k, n], seed + 7);
        let bm = seq(&[2, k, m], seed + 9);
        let err = check_gradient(|tape, x| {
            let wv = tape.constant(w.clone());
            let y = tape.matmul(x, wv)?;
            let bv = tape.constant(bm.clone());
            let z = tape.matmul(x, bv)?;            // [2, m, m]
            let zt = tape.transpose(z)?;
            let zf = tape.flip(zt, 1)?;
            let zz = tape.mul(zf, zf)?;
            let yc = tape.concat(&[y, y], 2)?;
            let ys = tape.slice(yc, 2, 1, n)?;
            let yr = tape.reshape(ys, &[2 * m * n])?;
            let yy = tape.mul(yr, yr)?;
            let a = tape.sum_all(zz)?;
            let b = tape.sum_all(yy)?;
            tape.add(a, b)
        }, &x0, 1e-5).unwrap();
        prop_assert!(err < 1e-5, "rel err {}", err);
    }

    #[test]
    fn conv_gather_normalize_gradients(
        t_len in 3usize..=8, cin in 1usize..=4, cout in 1usize..=4, kw in 1usize..=3,
        seed in 0u64..10_000,
    ) {
        let x0 = seq(&[2, t_len, cin], seed);
        let w = seq(&[kw, cin, cout], seed + 3);
        let err_x = check_gradient(|tape, x| {
            let wv = tape.constant(w.clone());
            let y = tape.conv1d(x, wv)?;
            let d = tape.delay_embed(y, 2)?;
            let d = tape.reshape(d, &[2 * t_len, 2, cout])?;
            let u = tape.unfold(d, 2)?;
            let u = tape.reshape(u, &[2 * t_len, 2 * cout])?;
            let nrm = tape.l2_normalize(u)?;
            let idx: Vec<usize> = (0..2 * t_len).flat_map(|r| [r % (2 * cout), 0]).collect();
            let g = tape.gather_last(nrm, &idx, 2)?;
            let g2 = tape.mul(g, g)?;
            let s1 = tape.sum_all(g2)?;
            let y2 = tape.mul(y, y)?;
            let s2 = tape.sum_all(y2)?;
            tape.add(s1, s2)
        }, &x0, 1e-5).unwrap();
        prop_assert!(err_x < 1e-5, "rel err {}", err_x);
        let err_w = check_gradient(|tape, wv| {
            let x = tape.constant(x0.clone());
            let y = tape.conv1d(x, wv)?;
            let y = tape.relu(y)?;
            let y2 = tape.mul(y, y)?;
            tape.sum_all(y2)
        }, &w, 1e-5).unwrap();
        prop_assert!(err_w < 1e-5, "rel err {}", err_w);
    }

    #[test]
    fn circular_conv_gradients(n in 1usize..=8, seed in 0u64..10_000) {
        let a0 = seq(&[3, n], seed);
        let b0 = seq(&[n], seed + 5);
        let err_a = check_gradient(|tape, a| {
            let b = tape.constant(b0.clone());
            let c = tape.circular_conv(a, b)?;
            let c2 = tape.mul(c, c)?;
            tape.sum_all(c2)
        }, &a0, 1e-5).unwrap();
        let err_b = check_gradient(|tape, b| {
            let a = tape.constant(a0.clone());
            let c = tape.circular_conv(a, b)?;
            let c2 = tape.mul(c, c)?;
            tape.sum_all(c2)
        }, &b0, 1e-5).unwrap();
        prop_assert!(err_a < 1e-5 && err_b < 1e-5, "{} {}", err_a, err_b);
    }
}
