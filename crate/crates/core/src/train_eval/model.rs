use std::path::Path;

use rand::Rng;
use s4m_autodiff::{Binding, Params, Tape, Tensor, TensorError, Var};

use crate::atpm::{
    bank_read, encode_slices, encode_steps, init_combine, init_decay, init_encoder, local_stats,
    slice_ending_at, window_extremes, PrototypeBank,
};
use crate::checkpoint::{load_params, save_params};
use crate::error::{Error, Result};
use crate::mds::{backbone_forward, init_backbone, mask_stream_names};
use crate::rng::stage_rng;
use crate::train_eval::{Sample, TrainConfig};

pub const ENC: &str = "enc";
pub const DECAY: &str = "ls";
pub const COMBINE: &str = "cmb";
pub const PROJ_W: &str = "proj.w";
pub const PROJ_B: &str = "proj.b";

/// How often the bank was touched.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BankCounters {
    pub inits: u64,
    pub reads: u64,
    pub writes: u64,
}

/// A stacked batch of samples.
pub struct Batch {
    pub x: Tensor,
    pub m: Tensor,
    pub y: Tensor,
    pub ym: Tensor,
}

impl Batch {
    pub fn new(samples: &[Sample], lookback: usize, horizon: usize, d: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let b = samples.len();
        let cat = |f: fn(&Sample) -> &Vec<f64>| samples.iter().flat_map(|s| f(s).iter().copied()).collect::<Vec<_>>();
        Ok(Self {
            x: Tensor::new(&[b, lookback, d], cat(|s| &s.x))?,
            m: Tensor::new(&[b, lookback, d], cat(|s| &s.m))?,
            y: Tensor::new(&[b, horizon, d], cat(|s| &s.y))?,
            ym: Tensor::new(&[b, horizon, d], cat(|s| &s.ym))?,
        })
    }

    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Trained or freshly initialized forecaster with its prototype state.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub cfg: TrainConfig,
    pub d: usize,
    pub params: Params,
    /// Prototype encoder, keyed like the `enc.*` query encoder.
    pub enc_p: Params,
    pub bank: Option<PrototypeBank>,
    /// Per-variable fill for windows where a variable is never observed.
    pub fallback: Vec<f64>,
    pub counters: BankCounters,
}

fn is_state_matrix(name: &str) -> bool {
    name.ends_with(".a")
}

impl Model {
    pub fn new(cfg: &TrainConfig, d: usize, fallback: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        if fallback.len() != d {
            return Err(Error::Contract(format!("{} fallback values for {d} variables", fallback.len())));
        }
        let mut rng = stage_rng(cfg.seed, "init");
        let mut params = Params::new();
        let blocks = cfg.blocks();
        init_backbone(&mut params, &blocks, d, &mut rng)?;
        let mut enc_p = Params::new();
        let r = cfg.r;
        let proj = |params: &mut Params, rng: &mut dyn rand::RngCore| {
            let bound = 1.0 / (d as f64).sqrt();
            params.insert(PROJ_W, Tensor::from_fn(&[d, r], |_| rng.random_range(-bound..bound)));
            params.insert(PROJ_B, Tensor::zeros(&[r]));
        };
        if cfg.method.is_baseline() {
            proj(&mut params, &mut rng);
        } else {
            init_decay(&mut params, DECAY, d, &mut rng);
            if cfg.no_atpm {
                proj(&mut params, &mut rng);
            } else {
                init_encoder(&mut params, ENC, d, &cfg.encoder(), &mut rng)?;
                init_combine(&mut params, COMBINE, d, r, &mut rng);
                enc_p = query_encoder(&params);
            }
            if cfg.no_mask {
                for name in mask_stream_names("block0.ssm", "block0.mask") {
                    let shape = params.require(&name)?.shape().to_vec();
                    params.insert(name, Tensor::zeros(&shape));
                }
            }
        }
        Ok(Self {
            cfg: cfg.clone(),
            d,
            params,
            enc_p,
            bank: None,
            fallback,
            counters: BankCounters::default(),
        })
    }

    /// Whether `name` receives gradients.
    pub fn trainable(&self, name: &str) -> bool {
        if is_state_matrix(name) && !self.cfg.train_a {
            return false;
        }
        if self.cfg.no_mask && mask_stream_names("block0.ssm", "block0.mask").iter().any(|n| n == name) {
            return false;
        }
        true
    }

    fn extremes_fallback(&self) -> Option<&[f64]> {
        self.cfg.fallback.then_some(self.fallback.as_slice())
    }

    /// Local statistics of the batch on `tape`.
    pub fn stats(&self, tape: &mut Tape, bind: &Binding, batch: &Batch) -> Result<Var> {
        let ex = window_extremes(&batch.x, &batch.m, self.extremes_fallback())?;
        Ok(local_stats(tape, bind, DECAY, &ex)?.z)
    }

    fn project(&self, tape: &mut Tape, bind: &Binding, x: Var) -> Result<Var> {
        let y = tape.matmul(x, bind.get(PROJ_W)?)?;
        Ok(tape.add(y, bind.get(PROJ_B)?)?)
    }

    /// Backbone on representations `o`, with the mask stream for s4m.
    pub fn head(&self, tape: &mut Tape, bind: &Binding, o: Var, batch: &Batch) -> Result<Var> {
        let blocks = self.cfg.blocks();
        let m = blocks.dual.then(|| tape.constant(batch.m.clone()));
        backbone_forward(tape, bind, &blocks, o, m, self.cfg.horizon)
    }

    /// Representations fed to the backbone. Reads the bank when it is used.
    pub fn represent(&mut self, tape: &mut Tape, bind: &Binding, batch: &Batch, z: Option<Var>) -> Result<Var> {
        if self.cfg.method.is_baseline() {
            let x = tape.constant(batch.x.clone());
            return self.project(tape, bind, x);
        }
        let z = match z {
            Some(z) => z,
            None => self.stats(tape, bind, batch)?,
        };
        if self.cfg.no_atpm {
            return self.project(tape, bind, z);
        }
        let bank = self.bank.as_ref().ok_or(Error::EmptyBank)?;
        let q = encode_steps(tape, bind, ENC, &self.cfg.encoder(), z)?;
        let read = bank_read(tape, bind, COMBINE, bank, q, z)?;
        self.counters.reads += 1;
        Ok(read.o)
    }

    /// Prototype-encoder encodings of `n_samples` slices per window of the
    /// local statistics `z [B, L, D]`, at distinct random steps.
    pub fn sample_prototypes<R: Rng + ?Sized>(&self, z: &Tensor, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        let shape = z.shape();
        let (b, l, d) = (shape[0], shape[1], shape[2]);
        let s = self.cfg.window;
        let mut slices = Vec::new();
        for w in 0..b {
            let zw = &z.data()[w * l * d..(w + 1) * l * d];
            let mut steps = rand::seq::index::sample(rng, l, self.cfg.n_samples).into_vec();
            steps.sort_unstable();
            for t in steps {
                slices.extend(slice_ending_at(zw, d, t, s));
            }
        }
        let n = slices.len() / (s * d);
        let mut tape = Tape::new();
        let bind = self.enc_p.bind(&mut tape, |_| false);
        let x = tape.constant(Tensor::new(&[n, s, d], slices)?);
        let p = encode_slices(&mut tape, &bind, ENC, &self.cfg.encoder(), x)?;
        Ok(tape.value(p).data().chunks(self.cfg.r).map(<[f64]>::to_vec).collect())
    }

    /// Seeds the bank by k-means over prototypes sampled from the local
    /// statistics `z`.
    pub fn init_bank(&mut self, z: &Tensor) -> Result<()> {
        let mut rng = stage_rng(self.cfg.seed, "bank/init");
        let protos = self.sample_prototypes(z, &mut rng)?;
        self.bank = Some(PrototypeBank::init_kmeans(self.cfg.bank(), &protos, self.cfg.k_init, &mut rng)?);
        self.counters.inits += 1;
        Ok(())
    }

    /// [`Model::init_bank`] on the statistics of `samples`.
    pub fn init_bank_from(&mut self, samples: &[Sample]) -> Result<()> {
        let batch = Batch::new(samples, self.cfg.lookback, self.cfg.horizon, self.d)?;
        let mut tape = Tape::new();
        let bind = self.params.bind(&mut tape, |_| false);
        let z = self.stats(&mut tape, &bind, &batch)?;
        let z = tape.value(z).clone();
        self.init_bank(&z)
    }

    /// Forecasts for a batch, `[B, horizon, D]`, in inference mode. Leaves
    /// the bank, the prototype encoder and the counters' write tallies alone.
    pub fn predict_batch(&mut self, batch: &Batch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bind = self.params.bind(&mut tape, |_| false);
        let o = self.represent(&mut tape, &bind, batch, None)?;
        let y = self.head(&mut tape, &bind, o, batch)?;
        Ok(tape.value(y).clone())
    }

    /// Forecasts for each sample, `horizon × D` row-major per sample.
    pub fn predict(&mut self, samples: &[Sample]) -> Result<Vec<Vec<f64>>> {
        let chunk = self.cfg.batch_size.max(1);
        let per = self.cfg.horizon * self.d;
        let mut out = Vec::with_capacity(samples.len());
        for part in samples.chunks(chunk) {
            let batch = Batch::new(part, self.cfg.lookback, self.cfg.horizon, self.d)?;
            let y = self.predict_batch(&batch).map_err(|e| numeric(e, 0, 0))?;
            out.extend(y.data().chunks(per).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        save_params(&dir.join("params.ckpt"), &self.params)?;
        let mut meta = Params::new();
        meta.insert("fallback", Tensor::new(&[self.d], self.fallback.clone())?);
        save_params(&dir.join("meta.ckpt"), &meta)?;
        if self.cfg.uses_bank() {
            save_params(&dir.join("enc_p.ckpt"), &self.enc_p)?;
            if let Some(bank) = &self.bank {
                let path = dir.join("bank.txt");
                std::fs::write(&path, bank.dump()).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
            }
        }
        Ok(())
    }

    /// Restores a model saved by [`Model::save`] under the configuration it
    /// was trained with.
    pub fn load(dir: &Path, cfg: &TrainConfig) -> Result<Self> {
        let meta = load_params(&dir.join("meta.ckpt"))?;
        let fallback = meta.require("fallback")?.data().to_vec();
        let mut model = Self::new(cfg, fallback.len(), fallback)?;
        let params = load_params(&dir.join("params.ckpt"))?;
        check_same_layout(&model.params, &params, "checkpoint")?;
        model.params = params;
        if cfg.uses_bank() {
            let enc_p = load_params(&dir.join("enc_p.ckpt"))?;
            check_same_layout(&model.enc_p, &enc_p, "prototype encoder")?;
            model.enc_p = enc_p;
            let path = dir.join("bank.txt");
            if path.exists() {
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
                model.bank = Some(PrototypeBank::from_dump(&text)?);
            }
        }
        Ok(model)
    }
}

fn check_same_layout(expected: &Params, got: &Params, what: &str) -> Result<()> {
    let a: Vec<_> = expected.iter().map(|(k, t)| (k, t.shape())).collect();
    let b: Vec<_> = got.iter().map(|(k, t)| (k, t.shape())).collect();
    if a != b {
        return Err(Error::Config(format!(
            "{what} does not match the configured architecture"
        )));
    }
    Ok(())
}

/// The `enc.*` tensors of `params`.
pub fn query_encoder(params: &Params) -> Params {
    params
        .iter()
        .filter(|(k, _)| k.starts_with("enc."))
        .map(|(k, t)| (k.to_string(), t.clone()))
        .collect()
}

/// Turns tape overflow into a numeric failure tagged with its position.
pub(crate) fn numeric(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Tensor(TensorError::NonFinite { op }) => Error::NumericFailure {
            epoch,
            batch,
            detail: format!("non-finite value in {op}"),
        },
        other => other,
    }
}
