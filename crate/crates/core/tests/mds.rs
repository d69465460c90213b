use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use s4m_autodiff::{Params, Tape, Tensor};
use s4m_core::gradcheck::check_params;
use s4m_core::mds::{
    backbone_forward, block_forward, dual_stream_convolution, dual_stream_convolution_encoded,
    dual_stream_layer, dual_stream_recurrence, dual_stream_recurrence_encoded, init_backbone,
    init_dual_stream, mask_encode, BlockConfig, DualStreamParams,
};
use s4m_core::ssm::run_recurrence;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut g = rng(seed);
    DMatrix::from_fn(rows, cols, |_, _| g.random_range(-1.0..1.0))
}

fn random_mask(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut g = rng(seed);
    DMatrix::from_fn(rows, cols, |_, _| if g.random_bool(0.6) { 1.0 } else { 0.0 })
}

/// A dual-stream layer with every parameter group randomized.
fn random_dual(r: usize, h: usize, d: usize, seed: u64, zero_bias: bool) -> DualStreamParams {
    let mut g = rng(seed);
    let mut params = Params::new();
    init_dual_stream(&mut params, "s", "m", r, h, d, &mut g);
    let mut p = DualStreamParams::from_params(&params, "s", "m").unwrap();
    for ch in p.base.iter_mut() {
        ch.d = g.random_range(-1.0..1.0);
    }
    for e in p.e.iter_mut() {
        *e = DVector::from_fn(h, |_, _| g.random_range(-1.0..1.0));
    }
    p.f = (0..r).map(|_| g.random_range(-1.0..1.0)).collect();
    p.mask_b = if zero_bias {
        DVector::zeros(r)
    } else {
        DVector::from_fn(r, |_, _| g.random_range(-0.5..0.5))
    };
    p
}

fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

#[test]
fn mask_encoder_examples() {
    let m = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 1.0]);
    let zero = mask_encode(&m, &DMatrix::zeros(3, 2), &DVector::zeros(2)).unwrap();
    assert!(zero.iter().all(|&v| v == 0.0));

    let w = DMatrix::from_row_slice(3, 2, &[0.5, -1.0, 2.0, 0.3, -0.2, 0.4]);
    let b = DVector::from_column_slice(&[0.1, 0.2]);
    let got = mask_encode(&m, &w, &b).unwrap();
    // Hand evaluation: column 0 = 0.5 - 0.2 + 0.1, column 1 = -1.0 + 0.4 + 0.2.
    assert!((got[(0, 0)] - 0.4).abs() < 1e-15);
    assert_eq!(got[(0, 1)], 0.0);

    let ones = mask_encode(&DMatrix::from_element(1, 3, 1.0), &w, &DVector::zeros(2)).unwrap();
    let zeros = mask_encode(&DMatrix::zeros(1, 3), &w, &DVector::zeros(2)).unwrap();
    assert_ne!(ones, zeros);

    assert!(mask_encode(&DMatrix::from_element(1, 3, 0.5), &w, &b).is_err());
}

#[test]
fn dead_mask_stream_is_plain_ssm() {
    let mut p = random_dual(3, 4, 2, 1, false);
    for e in p.e.iter_mut() {
        e.fill(0.0);
    }
    p.f = vec![0.0; 3];
    let o = random_matrix(20, 3, 2);
    let m = random_mask(20, 2, 3);
    let y = dual_stream_recurrence(&p, &o, &m).unwrap();
    for r in 0..3 {
        let u: Vec<f64> = o.column(r).iter().copied().collect();
        let (want, _) = run_recurrence(&p.base[r], &u, None).unwrap();
        for t in 0..20 {
            assert_eq!(y[(t, r)], want[t]);
        }
    }
}

#[test]
fn mask_stream_alone_is_a_second_ssm() {
    let mut p = random_dual(2, 3, 2, 4, false);
    for ch in p.base.iter_mut() {
        ch.d = 0.0;
    }
    let o = DMatrix::zeros(16, 2);
    let enc = random_matrix(16, 2, 5).abs();
    let y = dual_stream_recurrence_encoded(&p, &o, &enc).unwrap();
    for r in 0..2 {
        // Same A, C and step, with E in the input slot and F as the skip.
        let mut twin = p.base[r].clone();
        twin.b = p.e[r].clone();
        twin.d = p.f[r];
        let u: Vec<f64> = enc.column(r).iter().copied().collect();
        let (want, _) = run_recurrence(&twin, &u, None).unwrap();
        for t in 0..16 {
            assert!((y[(t, r)] - want[t]).abs() < 1e-12);
        }
    }
}

#[test]
fn identical_streams_double_the_state_response() {
    let mut p = random_dual(2, 4, 1, 6, false);
    for (r, ch) in p.base.iter_mut().enumerate() {
        ch.d = 0.0;
        p.e[r] = ch.b.clone();
        p.f[r] = 0.0;
    }
    let o = random_matrix(12, 2, 7);
    let both = dual_stream_convolution_encoded(&p, &o, &o).unwrap();
    let single = dual_stream_convolution_encoded(&p, &o, &DMatrix::zeros(12, 2)).unwrap();
    assert!(max_abs(&both, &(single * 2.0)) < 1e-12);
}

#[test]
fn length_mismatch_is_rejected() {
    let p = random_dual(2, 2, 2, 8, false);
    let o = random_matrix(5, 2, 9);
    let m = random_mask(6, 2, 10);
    assert!(dual_stream_recurrence(&p, &o, &m).is_err());
    assert!(dual_stream_convolution(&p, &o, &m).is_err());
}

#[test]
fn tape_layer_matches_recurrence() {
    let (l, r, h, d) = (30, 3, 4, 2);
    let mut g = rng(11);
    let mut params = Params::new();
    init_dual_stream(&mut params, "s", "m", r, h, d, &mut g);
    params.insert("s.e", Tensor::from_fn(&[r, h], |_| g.random_range(-1.0..1.0)));
    params.insert("s.f", Tensor::from_fn(&[r], |_| g.random_range(-1.0..1.0)));
    let p = DualStreamParams::from_params(&params, "s", "m").unwrap();
    let o = random_matrix(l, r, 12);
    let enc = random_matrix(l, r, 13).abs();
    let want = dual_stream_recurrence_encoded(&p, &o, &enc).unwrap();

    let mut tape = Tape::new();
    let bind = params.bind(&mut tape, |_| false);
    let row_major = |m: &DMatrix<f64>| Tensor::new(&[1, l, r], m.transpose().as_slice().to_vec()).unwrap();
    let ov = tape.constant(row_major(&o));
    let ev = tape.constant(row_major(&enc));
    let y = dual_stream_layer(&mut tape, &bind, "s", ov, ev).unwrap();
    let yt = tape.value(y);
    for t in 0..l {
        for c in 0..r {
            assert!((yt.at(&[0, t, c]) - want[(t, c)]).abs() < 1e-8);
        }
    }
}

fn cfg(r: usize, n_blocks: usize, dual: bool) -> BlockConfig {
    BlockConfig {
        r,
        f_ch: 6,
        n_blocks,
        state: 4,
        dropout: 0.1,
        dual,
    }
}

fn backbone_params(c: &BlockConfig, d: usize, seed: u64) -> Params {
    let mut params = Params::new();
    init_backbone(&mut params, c, d, &mut rng(seed)).unwrap();
    // Wake the mask stream so its gradients are exercised.
    let mut g = rng(seed + 1);
    if c.dual {
        params.insert("block0.ssm.e", Tensor::from_fn(&[c.r, c.state], |_| g.random_range(-0.5..0.5)));
        params.insert("block0.ssm.f", Tensor::from_fn(&[c.r], |_| g.random_range(-0.5..0.5)));
        params.insert("block0.mask.b", Tensor::from_fn(&[c.r], |_| g.random_range(-0.5..0.5)));
    }
    for i in 0..c.n_blocks {
        params.insert(format!("block{i}.ln.beta"), Tensor::from_fn(&[c.r], |_| g.random_range(-0.5..0.5)));
        params.insert(format!("block{i}.ff1.b"), Tensor::from_fn(&[c.f_ch], |_| g.random_range(-0.5..0.5)));
    }
    params
}

fn inputs(b: usize, l: usize, r: usize, d: usize, seed: u64) -> (Tensor, Tensor) {
    let mut g = rng(seed);
    let o = Tensor::from_fn(&[b, l, r], |_| g.random_range(-1.0..1.0));
    let m = Tensor::from_fn(&[b, l, d], |_| if g.random_bool(0.7) { 1.0 } else { 0.0 });
    (o, m)
}

#[test]
fn zero_readout_and_zero_feedforward_give_layer_norm() {
    let c = BlockConfig { dropout: 0.0, ..cfg(4, 1, false) };
    let mut params = backbone_params(&c, 2, 20);
    params.insert("block0.ssm.c", Tensor::zeros(&[4, 4]));
    params.insert("block0.ssm.d", Tensor::zeros(&[4]));
    params.insert("block0.ln.beta", Tensor::zeros(&[4]));
    for k in ["ff2.w", "ff2.b"] {
        let name = format!("block0.{k}");
        let shape = params.get(&name).unwrap().shape().to_vec();
        params.insert(name, Tensor::zeros(&shape));
    }
    let (o, _) = inputs(2, 8, 4, 2, 21);
    let mut tape = Tape::training(3);
    let bind = params.bind(&mut tape, |_| false);
    let x = tape.constant(o.clone());
    let y = block_forward(&mut tape, &bind, &c, 0, x, None).unwrap();
    let want = tape.layer_norm(x, 1e-5).unwrap();
    assert!(tape.value(y).max_abs_diff(tape.value(want)) < 1e-12);
}

#[test]
fn inference_is_bitwise_repeatable() {
    let c = cfg(4, 2, true);
    let params = backbone_params(&c, 2, 30);
    let (o, m) = inputs(2, 16, 4, 2, 31);
    let run = || {
        let mut tape = Tape::new();
        let bind = params.bind(&mut tape, |_| false);
        let (ov, mv) = (tape.constant(o.clone()), tape.constant(m.clone()));
        let y = backbone_forward(&mut tape, &bind, &c, ov, Some(mv), 5).unwrap();
        tape.value(y).clone()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.shape(), &[2, 5, 2]);
    assert_eq!(a.data(), b.data());
}

#[test]
fn horizon_bounds() {
    let c = cfg(4, 1, true);
    let params = backbone_params(&c, 2, 40);
    let (o, m) = inputs(1, 8, 4, 2, 41);
    let mut tape = Tape::new();
    let bind = params.bind(&mut tape, |_| false);
    let (ov, mv) = (tape.constant(o), tape.constant(m));
    let full = backbone_forward(&mut tape, &bind, &c, ov, Some(mv), 8).unwrap();
    assert_eq!(tape.shape(full), &[1, 8, 2]);
    assert!(backbone_forward(&mut tape, &bind, &c, ov, Some(mv), 9).is_err());
    assert!(backbone_forward(&mut tape, &bind, &c, ov, None, 4).is_err());
}

#[test]
fn silenced_mask_stream_matches_plain_backbone_bitwise() {
    let dual = cfg(4, 2, true);
    let mut params = backbone_params(&dual, 3, 50);
    params.insert("block0.ssm.e", Tensor::zeros(&[4, 4]));
    params.insert("block0.ssm.f", Tensor::zeros(&[4]));
    params.insert("block0.mask.w", Tensor::zeros(&[3, 4]));
    params.insert("block0.mask.b", Tensor::zeros(&[4]));
    let plain = BlockConfig { dual: false, ..dual.clone() };
    let (o, m) = inputs(2, 16, 4, 3, 51);
    let (_, m2) = inputs(2, 16, 4, 3, 52);

    let run = |c: &BlockConfig, mask: &Tensor| {
        let mut tape = Tape::new();
        let bind = params.bind(&mut tape, |_| false);
        let (ov, mv) = (tape.constant(o.clone()), tape.constant(mask.clone()));
        let y = backbone_forward(&mut tape, &bind, c, ov, Some(mv), 6).unwrap();
        tape.value(y).data().to_vec()
    };
    let base = run(&plain, &m);
    assert_eq!(run(&dual, &m), base);
    assert_eq!(run(&dual, &m2), base);
}

fn weighted_output_check(c: &BlockConfig, l: usize, block_only: bool) {
    let d = 2;
    let params = backbone_params(c, d, 60);
    let (o, m) = inputs(2, l, c.r, d, 61);
    let out_shape = if block_only { vec![2, l, c.r] } else { vec![2, l / 2, d] };
    let mut g = rng(62);
    let w = Tensor::from_fn(&out_shape, |_| g.random_range(-1.0..1.0));
    let errs = check_params(
        &params,
        |_| true,
        |tape, bind| {
            let (ov, mv) = (tape.constant(o.clone()), tape.constant(m.clone()));
            let y = if block_only {
                let enc = s4m_core::mds::mask_encoder(tape, bind, "block0.mask", mv)?;
                block_forward(tape, bind, c, 0, ov, Some(enc))?
            } else {
                backbone_forward(tape, bind, c, ov, Some(mv), l / 2)?
            };
            let wv = tape.constant(w.clone());
            let p = tape.mul(y, wv)?;
            Ok(tape.sum_all(p)?)
        },
        1e-6,
    )
    .unwrap();
    assert!(!errs.is_empty());
    for (name, e) in errs {
        assert!(e < 1e-4, "{name}: relative error {e}");
    }
}

#[test]
fn block_gradients_match_finite_differences() {
    weighted_output_check(&cfg(4, 1, true), 8, true);
}

#[test]
fn backbone_gradients_match_finite_differences() {
    weighted_output_check(&cfg(4, 2, true), 16, false);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn dual_modes_agree(seed in 0u64..100_000, r in 1usize..=4, h in 1usize..=8, l in 1usize..=128, d in 1usize..=3) {
        let p = random_dual(r, h, d, seed, false);
        let o = random_matrix(l, r, seed + 1);
        let m = random_mask(l, d, seed + 2);
        let rec = dual_stream_recurrence(&p, &o, &m).unwrap();
        let conv = dual_stream_convolution(&p, &o, &m).unwrap();
        prop_assert!(max_abs(&rec, &conv) < 1e-8);
    }

    #[test]
    fn superposition_in_both_streams(seed in 0u64..100_000, r in 1usize..=4, h in 1usize..=6, l in 1usize..=64) {
        let d = 3;
        let p = random_dual(r, h, d, seed, true);
        let o = random_matrix(l, r, seed + 1);
        let m = random_mask(l, d, seed + 2);
        let enc = mask_encode(&m, &p.mask_w, &p.mask_b).unwrap();
        let full = dual_stream_recurrence(&p, &o, &m).unwrap();
        let data_only = dual_stream_recurrence_encoded(&p, &o, &DMatrix::zeros(l, r)).unwrap();
        let mask_only = dual_stream_recurrence_encoded(&p, &DMatrix::zeros(l, r), &enc).unwrap();
        prop_assert!(max_abs(&full, &(data_only + mask_only)) < 1e-9);
    }
}
