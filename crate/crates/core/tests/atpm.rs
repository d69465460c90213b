use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use s4m_autodiff::{Params, Tape, Tensor};
use s4m_core::atpm::{
    bank_read, encode_slices, encode_steps, init_combine, init_decay, init_encoder, kmeans,
    local_stats, momentum_update, normalized, slice_ending_at, window_extremes, BankConfig,
    Cluster, EncoderConfig, Member, PrototypeBank, WriteOutcome,
};
use s4m_core::gradcheck::check_params;
use s4m_core::ssm::{bilinear_discretize, SsmChannelParams};
use s4m_core::Error;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn decay(w1: f64, b1: f64, w2: f64, b2: f64, d: usize) -> Params {
    let mut p = Params::new();
    p.insert("ls.w1", Tensor::full(&[d], w1));
    p.insert("ls.b1", Tensor::full(&[d], b1));
    p.insert("ls.w2", Tensor::full(&[d], w2));
    p.insert("ls.b2", Tensor::full(&[d], b2));
    p
}

fn run_stats(params: &Params, x: &Tensor, m: &Tensor) -> (Tensor, Tensor, Tensor) {
    let ex = window_extremes(x, m, None).unwrap();
    let mut tape = Tape::new();
    let bind = params.bind(&mut tape, |_| false);
    let s = local_stats(&mut tape, &bind, "ls", &ex).unwrap();
    (
        tape.value(s.z).clone(),
        tape.value(s.omega1).clone(),
        tape.value(s.omega2).clone(),
    )
}

#[test]
fn hand_worked_fill_value() {
    // One variable: 2 at t=0, missing at t=1 and t=2, 6 at t=3.
    let x = Tensor::new(&[4, 1], vec![2.0, f64::NAN, 1e9, 6.0]).unwrap();
    let m = Tensor::new(&[4, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let (z, o1, o2) = run_stats(&decay(1.0, 0.0, 1.0, 0.0, 1), &x, &m);
    let (e1, e2) = ((-1f64).exp(), (-2f64).exp());
    let want = (e1 * 2.0 + e2 * 6.0) / (e1 + e2);
    assert!((z.data()[1] - want).abs() < 1e-12);
    assert!((z.data()[1] - 3.076).abs() < 1e-3);
    assert_eq!(z.data()[0], 2.0);
    assert_eq!(z.data()[3], 6.0);
    for i in 0..4 {
        assert!((o1.data()[i] + o2.data()[i] - 1.0).abs() < 1e-12);
    }
}

#[test]
fn symmetric_weights_fill_with_midpoint() {
    let x = Tensor::new(&[5, 2], vec![1.0, 4.0, 0.0, 0.0, 3.0, -2.0, 0.0, 8.0, 5.0, 0.0]).unwrap();
    let m = Tensor::new(&[5, 2], vec![1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
    let (z, o1, _) = run_stats(&decay(0.0, 0.0, 0.0, 0.0, 2), &x, &m);
    for (t, v) in [(1, 0), (1, 1), (3, 0), (4, 1)] {
        assert_eq!(z.at(&[t, v]), 3.0);
    }
    assert!(o1.data().iter().all(|&v| v == 0.5));
}

#[test]
fn fully_missing_variable() {
    let x = Tensor::new(&[3, 2], vec![1.0, 0.0, 2.0, 0.0, 3.0, 0.0]).unwrap();
    let m = Tensor::new(&[3, 2], vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
    match window_extremes(&x, &m, None) {
        Err(Error::DegenerateVariable { variable }) => assert_eq!(variable, 1),
        other => panic!("expected degenerate variable, got {other:?}"),
    }
    let ex = window_extremes(&x, &m, Some(&[0.0, 7.5])).unwrap();
    let mut tape = Tape::new();
    let p = decay(0.3, 0.1, 0.2, 0.0, 2);
    let bind = p.bind(&mut tape, |_| false);
    let z = local_stats(&mut tape, &bind, "ls", &ex).unwrap().z;
    for t in 0..3 {
        assert!((tape.value(z).at(&[t, 1]) - 7.5).abs() < 1e-12);
        assert_eq!(ex.delta_min[t * 2 + 1], 3.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn observed_entries_pass_through(seed in 0u64..100_000, l in 2usize..24, d in 1usize..5) {
        let mut g = rng(seed);
        let mut xs = Vec::new();
        let mut ms = Vec::new();
        for t in 0..l {
            for _ in 0..d {
                // First row always observed so no variable is empty.
                let obs = t == 0 || g.random_bool(0.5);
                ms.push(if obs { 1.0 } else { 0.0 });
                xs.push(if obs { g.random_range(-5.0..5.0) } else { 1e9 });
            }
        }
        let x = Tensor::new(&[1, l, d], xs.clone()).unwrap();
        let m = Tensor::new(&[1, l, d], ms.clone()).unwrap();
        let mut p = Params::new();
        init_decay(&mut p, "ls", d, &mut g);
        let (z, o1, o2) = run_stats(&p, &x, &m);
        for i in 0..l * d {
            if ms[i] == 1.0 {
                prop_assert_eq!(z.data()[i], xs[i]);
            } else {
                prop_assert!(z.data()[i].abs() <= 5.0);
            }
            prop_assert!((o1.data()[i] + o2.data()[i] - 1.0).abs() < 1e-12);
        }
    }
}

fn enc_cfg() -> EncoderConfig {
    EncoderConfig {
        window: 8,
        conv_width: 3,
        r: 4,
        state: 3,
        dropout: 0.0,
    }
}

/// Direct loop implementation of the four encoder stages for one slice.
fn encoder_oracle(p: &Params, x: &[f64], d: usize, cfg: &EncoderConfig) -> Vec<f64> {
    let (s, w, r) = (cfg.window, cfg.conv_width, cfg.r);
    let tc = s - w + 1;
    let get = |k: &str| p.get(&format!("enc.{k}")).unwrap().data().to_vec();
    let (cw, cb) = (get("conv.w"), get("conv.b"));
    // Convolution over W×D patches.
    let mut c = vec![vec![0.0; r]; tc];
    for t in 0..tc {
        for f in 0..r {
            let mut acc = cb[f];
            for i in 0..w {
                for v in 0..d {
                    acc += x[(t + i) * d + v] * cw[(i * d + v) * r + f];
                }
            }
            c[t][f] = acc.max(0.0);
        }
    }
    // Attention with residual.
    let proj = |m: &[f64]| -> Vec<Vec<f64>> {
        (0..tc)
            .map(|t| (0..r).map(|j| (0..r).map(|i| c[t][i] * m[i * r + j]).sum()).collect())
            .collect()
    };
    let (q, k, v) = (proj(&get("attn.wq")), proj(&get("attn.wk")), proj(&get("attn.wv")));
    let mut a = c.clone();
    for t in 0..tc {
        let logits: Vec<f64> = (0..tc)
            .map(|u| (0..r).map(|j| q[t][j] * k[u][j]).sum::<f64>() / (r as f64).sqrt())
            .collect();
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let tot: f64 = e.iter().sum();
        for j in 0..r {
            a[t][j] += (0..tc).map(|u| e[u] / tot * v[u][j]).sum::<f64>();
        }
    }
    // Per-channel SSM run to the last step.
    let h = cfg.state;
    let (sa, sld, sb, sc, sd) = (get("ssm.a"), get("ssm.log_delta"), get("ssm.b"), get("ssm.c"), get("ssm.d"));
    (0..r)
        .map(|ch| {
            let chan = SsmChannelParams {
                a: DMatrix::from_row_slice(h, h, &sa[ch * h * h..(ch + 1) * h * h]),
                b: DVector::from_column_slice(&sb[ch * h..(ch + 1) * h]),
                c: DVector::from_column_slice(&sc[ch * h..(ch + 1) * h]),
                d: sd[ch],
                log_delta: sld[ch],
            };
            let disc = bilinear_discretize(&chan).unwrap();
            let mut state = DVector::zeros(h);
            let mut y = 0.0;
            for row in a.iter() {
                state = &disc.a_bar * state + &disc.b_bar * row[ch];
                y = chan.c.dot(&state) + chan.d * row[ch];
            }
            y
        })
        .collect()
}

fn encoder_params(d: usize, cfg: &EncoderConfig, seed: u64) -> Params {
    let mut p = Params::new();
    let mut g = rng(seed);
    init_encoder(&mut p, "enc", d, cfg, &mut g).unwrap();
    p.insert("enc.conv.b", Tensor::from_fn(&[cfg.r], |_| g.random_range(-0.3..0.3)));
    p
}

#[test]
fn encoder_matches_straight_line_oracle() {
    let cfg = enc_cfg();
    let d = 2;
    let p = encoder_params(d, &cfg, 1);
    let mut g = rng(2);
    let x: Vec<f64> = (0..cfg.window * d).map(|_| g.random_range(-1.0..1.0)).collect();
    let mut tape = Tape::new();
    let bind = p.bind(&mut tape, |_| false);
    let xv = tape.constant(Tensor::new(&[1, cfg.window, d], x.clone()).unwrap());
    let y = encode_slices(&mut tape, &bind, "enc", &cfg, xv).unwrap();
    let want = encoder_oracle(&p, &x, d, &cfg);
    assert_eq!(tape.shape(y), &[1, 4]);
    for (a, b) in tape.value(y).data().iter().zip(&want) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn encoder_zero_input_and_determinism() {
    let cfg = enc_cfg();
    let p = encoder_params(2, &cfg, 3);
    let mut zeroed = p.clone();
    zeroed.insert("enc.conv.b", Tensor::zeros(&[4]));
    let mut tape = Tape::new();
    let bind = zeroed.bind(&mut tape, |_| false);
    let xv = tape.constant(Tensor::zeros(&[3, 8, 2]));
    let y = encode_slices(&mut tape, &bind, "enc", &cfg, xv).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

    let mut g = rng(4);
    let z = Tensor::from_fn(&[2, 12, 2], |_| g.random_range(-1.0..1.0));
    let run = || {
        let mut tape = Tape::new();
        let bind = p.bind(&mut tape, |_| false);
        let zv = tape.constant(z.clone());
        let y = encode_steps(&mut tape, &bind, "enc", &cfg, zv).unwrap();
        tape.value(y).clone()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.shape(), &[2, 12, 4]);
    assert_eq!(a.data(), b.data());

    // Step t of encode_steps is the slice ending at t, padded with row 0.
    let row0: Vec<f64> = z.data()[..12 * 2].to_vec();
    for t in [0, 3, 11] {
        let s = slice_ending_at(&row0, 2, t, 8);
        let want = encoder_oracle(&p, &s, 2, &cfg);
        for j in 0..4 {
            assert!((a.at(&[0, t, j]) - want[j]).abs() < 1e-10);
        }
    }

    let bad = EncoderConfig { window: 2, ..cfg };
    let mut p2 = Params::new();
    assert!(matches!(
        init_encoder(&mut p2, "enc", 2, &bad, &mut g),
        Err(Error::Config(_))
    ));
}

fn unit(v: &[f64]) -> Vec<f64> {
    normalized(v)
}

fn bank_with(centroids: &[Vec<f64>], top_k: usize) -> PrototypeBank {
    let cfg = BankConfig { top_k, ..BankConfig::default() };
    let mut bank = PrototypeBank::new(cfg, centroids[0].len()).unwrap();
    for (i, c) in centroids.iter().enumerate() {
        bank.clusters.push_back(Cluster {
            seq: i as u64,
            centroid: c.clone(),
            members: VecDeque::from([Member { seq: i as u64, v: c.clone() }]),
        });
    }
    bank
}

fn read(bank: &PrototypeBank, q: Vec<f64>, r: usize) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let mut p = Params::new();
    init_combine(&mut p, "cmb", 1, r, &mut rng(0));
    p.insert("cmb.w", Tensor::zeros(&[1 + 2 * r, r]));
    let mut tape = Tape::new();
    let bind = p.bind(&mut tape, |_| false);
    let qv = tape.constant(Tensor::new(&[1, 1, r], q).unwrap());
    let zv = tape.constant(Tensor::zeros(&[1, 1, 1]));
    let out = bank_read(&mut tape, &bind, "cmb", bank, qv, zv).unwrap();
    (
        out.selected,
        tape.value(out.weights).data().to_vec(),
        tape.value(out.o).data().to_vec(),
    )
}

#[test]
fn read_examples() {
    let c1 = unit(&[0.9, (1.0f64 - 0.81).sqrt(), 0.0]);
    let c2 = unit(&[0.5, 0.75f64.sqrt(), 0.0]);
    let c3 = unit(&[0.1, 0.0, 0.99f64.sqrt()]);
    let bank = bank_with(&[c1.clone(), c2.clone(), c3.clone()], 2);
    let (sel, w, _) = read(&bank, vec![2.0, 0.0, 0.0], 3);
    assert_eq!(sel, vec![0, 1]);
    let e = (0.4f64).exp();
    assert!((w[0] - e / (e + 1.0)).abs() < 1e-12);
    assert!((w[0] - 0.599).abs() < 1e-3 && (w[1] - 0.401).abs() < 1e-3);
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let single = bank_with(&[c3.clone()], 3);
    let (sel, w, _) = read(&single, vec![0.3, -1.0, 0.2], 3);
    assert_eq!((sel, w), (vec![0], vec![1.0]));

    let exact = bank_with(&[c1.clone(), c2.clone(), c3.clone()], 1);
    let (sel, w, o) = read(&exact, c2.clone(), 3);
    assert_eq!((sel, w), (vec![1], vec![1.0]));
    // Zero combine weights leave o = q.
    for (a, b) in o.iter().zip(&c2) {
        assert!((a - b).abs() < 1e-15);
    }

    let empty = PrototypeBank::new(BankConfig::default(), 3).unwrap();
    let mut tape = Tape::new();
    let p = Params::new();
    let bind = p.bind(&mut tape, |_| false);
    let q = tape.constant(Tensor::zeros(&[1, 1, 3]));
    let z = tape.constant(Tensor::zeros(&[1, 1, 1]));
    assert!(matches!(
        bank_read(&mut tape, &bind, "cmb", &empty, q, z),
        Err(Error::EmptyBank)
    ));
}

#[test]
fn write_examples() {
    let cfg = BankConfig { k1: 2, ..BankConfig::default() };
    let mut bank = PrototypeBank::new(cfg, 3).unwrap();
    assert_eq!(bank.write(&[1.0, 0.0, 0.0]).unwrap(), WriteOutcome::Created);
    assert_eq!(bank.write(&[2.0, 0.0, 0.0]).unwrap(), WriteOutcome::Joined(0));
    assert_eq!(bank.clusters[0].centroid, vec![1.0, 0.0, 0.0]);
    assert_eq!(bank.clusters[0].members.len(), 2);
    assert_eq!(bank.write(&[0.0, 1.0, 0.0]).unwrap(), WriteOutcome::Created);
    // Similarity 0.8 sits between the thresholds.
    assert_eq!(bank.write(&[0.8, 0.6, 0.0]).unwrap(), WriteOutcome::Skipped);
    assert_eq!(bank.write(&[0.0, 0.0, 1.0]).unwrap(), WriteOutcome::Created);
    assert_eq!(bank.len(), 2);
    assert_eq!(bank.clusters[0].centroid, vec![0.0, 1.0, 0.0]);
    assert_eq!(bank.clusters[1].centroid, vec![0.0, 0.0, 1.0]);

    let text = bank.dump();
    assert_eq!(PrototypeBank::from_dump(&text).unwrap(), bank);
}

/// Reference model of the bank: plain vectors, rebuilt means.
struct QueueSim {
    k1: usize,
    k2: usize,
    tau1: f64,
    tau2: f64,
    clusters: Vec<Vec<(u64, Vec<f64>)>>,
    seq: u64,
}

impl QueueSim {
    fn centroid(members: &[(u64, Vec<f64>)]) -> Vec<f64> {
        let r = members[0].1.len();
        let mut m = vec![0.0; r];
        for (_, v) in members {
            for i in 0..r {
                m[i] += v[i] / members.len() as f64;
            }
        }
        let n = m.iter().map(|x| x * x).sum::<f64>().sqrt();
        m.iter().map(|x| x / n).collect()
    }

    fn write(&mut self, p: &[f64]) {
        let n = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        let u: Vec<f64> = p.iter().map(|x| x / n).collect();
        let mut best: Option<(usize, f64)> = None;
        for (j, c) in self.clusters.iter().enumerate() {
            let cen = Self::centroid(c);
            let rho: f64 = cen.iter().zip(&u).map(|(a, b)| a * b).sum();
            if best.map_or(true, |(_, b)| rho > b) {
                best = Some((j, rho));
            }
        }
        match best {
            Some((j, rho)) if rho >= self.tau1 => {
                self.clusters[j].push((self.seq, u));
                if self.clusters[j].len() > self.k2 {
                    self.clusters[j].remove(0);
                }
                self.seq += 1;
            }
            Some((_, rho)) if rho >= self.tau2 => {}
            _ => {
                self.clusters.push(vec![(self.seq, u)]);
                if self.clusters.len() > self.k1 {
                    self.clusters.remove(0);
                }
                self.seq += 1;
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn bank_matches_queue_simulation(seed in 0u64..100_000, k1 in 1usize..6, k2 in 1usize..5) {
        let cfg = BankConfig { k1, k2, ..BankConfig::default() };
        let mut bank = PrototypeBank::new(cfg.clone(), 3).unwrap();
        let mut sim = QueueSim { k1, k2, tau1: cfg.tau1, tau2: cfg.tau2, clusters: vec![], seq: 0 };
        let mut g = rng(seed);
        for step in 0..300 {
            // Small set of base directions plus jitter hits all three branches.
            let base = g.random_range(0..6);
            let p: Vec<f64> = (0..3)
                .map(|i| if i == base % 3 { if base < 3 { 1.0 } else { -1.0 } } else { 0.0 } + g.random_range(-0.5..0.5))
                .collect();
            bank.write(&p).unwrap();
            sim.write(&p);
            prop_assert!(bank.len() <= k1 && !bank.is_empty());
            prop_assert_eq!(bank.len(), sim.clusters.len());
            for (c, s) in bank.clusters.iter().zip(&sim.clusters) {
                prop_assert!(c.members.len() <= k2 && !c.members.is_empty());
                let seqs: Vec<u64> = c.members.iter().map(|m| m.seq).collect();
                let want: Vec<u64> = s.iter().map(|m| m.0).collect();
                prop_assert_eq!(seqs, want, "step {}", step);
                let norm = c.centroid.iter().map(|x| x * x).sum::<f64>().sqrt();
                prop_assert!((norm - 1.0).abs() < 1e-10);
                let mean = QueueSim::centroid(s);
                for (a, b) in c.centroid.iter().zip(&mean) {
                    prop_assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }
}

#[test]
fn momentum_examples() {
    let one = |v: f64| -> Params { [("enc.x".to_string(), Tensor::from_vec(vec![v, 2.0 * v]))].into_iter().collect() };
    let (p, q) = (one(1.0), one(0.0));
    assert_eq!(momentum_update(&p, &q, 0.0).unwrap(), q);
    assert_eq!(momentum_update(&p, &p, 0.37).unwrap(), p);
    let m = momentum_update(&p, &q, 0.9).unwrap();
    assert_eq!(m.get("enc.x").unwrap().data(), &[0.9, 1.8]);
    assert!(momentum_update(&p, &q, 1.0).is_err());
    let wide: Params = [("enc.x".to_string(), Tensor::zeros(&[3]))].into_iter().collect();
    assert!(momentum_update(&p, &wide, 0.5).is_err());

    let mut g = rng(5);
    for _ in 0..50 {
        let gamma = g.random_range(0.9..0.9999);
        let a = one(g.random_range(-3.0..3.0));
        let b = one(g.random_range(-3.0..3.0));
        let n = momentum_update(&a, &b, gamma).unwrap();
        for ((x, y), z) in a.get("enc.x").unwrap().data().iter().zip(b.get("enc.x").unwrap().data()).zip(n.get("enc.x").unwrap().data()) {
            assert!((z - x).abs() <= (1.0 - gamma) * (y - x).abs() * (1.0 + 1e-12));
        }
    }
}

#[test]
fn kmeans_examples() {
    let mut g = rng(6);
    let mut pts: Vec<Vec<f64>> = Vec::new();
    for i in 0..12 {
        let (a, b) = (g.random_range(-0.1..0.1), g.random_range(-0.1..0.1));
        pts.push(if i < 6 { unit(&[1.0 + a, b]) } else { unit(&[a, 1.0 + b]) });
    }
    let bank = PrototypeBank::init_kmeans(BankConfig::default(), &pts, 2, &mut g).unwrap();
    assert_eq!(bank.len(), 2);
    let cloud_mean = |range: std::ops::Range<usize>| {
        let mut m = [0.0, 0.0];
        for p in &pts[range] {
            m[0] += p[0];
            m[1] += p[1];
        }
        unit(&m)
    };
    let (a, b) = (cloud_mean(0..6), cloud_mean(6..12));
    let close = |c: &[f64], w: &[f64]| c.iter().zip(w).all(|(x, y)| (x - y).abs() < 1e-6);
    let cs: Vec<&Vec<f64>> = bank.clusters.iter().map(|c| &c.centroid).collect();
    assert!((close(cs[0], &a) && close(cs[1], &b)) || (close(cs[0], &b) && close(cs[1], &a)));

    let roomy = BankConfig { k2: 12, ..BankConfig::default() };
    let one = PrototypeBank::init_kmeans(roomy, &pts, 1, &mut g).unwrap();
    assert!(close(&one.clusters[0].centroid, &cloud_mean(0..12)));
    // Members are the most recent k2 assignments.
    let tight = PrototypeBank::init_kmeans(BankConfig::default(), &pts, 1, &mut g).unwrap();
    assert_eq!(tight.clusters[0].members.len(), 10);
    assert!(close(&tight.clusters[0].centroid, &cloud_mean(2..12)));

    let same = vec![vec![0.0, 3.0]; 5];
    let degenerate = PrototypeBank::init_kmeans(BankConfig::default(), &same, 3, &mut g).unwrap();
    assert_eq!(degenerate.len(), 1);
    assert_eq!(degenerate.clusters[0].centroid, vec![0.0, 1.0]);

    let few = PrototypeBank::init_kmeans(BankConfig::default(), &pts[..2], 4, &mut g).unwrap();
    assert!(few.len() <= 2);

    let (centers, assign) = kmeans(&pts, 2, 50, 1e-6, &mut rng(7));
    assert_eq!(centers.len(), 2);
    assert!(assign[..6].iter().all(|&x| x == assign[0]));
    assert!(assign[6..].iter().all(|&x| x == assign[6]));
    assert_ne!(assign[0], assign[6]);
}

#[test]
fn read_path_gradients_match_finite_differences() {
    let (b, l, d) = (1, 6, 2);
    let cfg = EncoderConfig { window: 4, conv_width: 2, r: 3, state: 2, dropout: 0.0 };
    let mut g = rng(8);
    let mut params = encoder_params(d, &cfg, 9);
    init_decay(&mut params, "ls", d, &mut g);
    init_combine(&mut params, "cmb", d, cfg.r, &mut g);
    params.insert("cmb.d", Tensor::from_fn(&[cfg.r], |_| g.random_range(-0.3..0.3)));
    let x = Tensor::from_fn(&[b, l, d], |_| g.random_range(-1.0..1.0));
    let m = Tensor::from_fn(&[b, l, d], |i| if i < d || i % 3 != 1 { 1.0 } else { 0.0 });
    let ex = window_extremes(&x, &m, None).unwrap();
    let cents: Vec<Vec<f64>> = (0..4)
        .map(|_| unit(&(0..cfg.r).map(|_| g.random_range(-1.0..1.0)).collect::<Vec<_>>()))
        .collect();
    let bank = bank_with(&cents, 2);
    let w = Tensor::from_fn(&[b, l, cfg.r], |_| g.random_range(-1.0..1.0));
    let errs = check_params(
        &params,
        |_| true,
        |tape, bind| {
            let z = local_stats(tape, bind, "ls", &ex)?.z;
            let q = encode_steps(tape, bind, "enc", &cfg, z)?;
            let o = bank_read(tape, bind, "cmb", &bank, q, z)?.o;
            let wv = tape.constant(w.clone());
            let p = tape.mul(o, wv)?;
            Ok(tape.sum_all(p)?)
        },
        1e-6,
    )
    .unwrap();
    assert_eq!(errs.len(), params.len());
    for (name, e) in errs {
        assert!(e < 1e-4, "{name}: {e}");
    }
}
