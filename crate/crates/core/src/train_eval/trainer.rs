use std::time::Instant;

use s4m_autodiff::{Params, Tape};

use crate::atpm::momentum_update;
use crate::error::{Error, Result};
use crate::rng::{stage_rng, sub_seed};
use crate::train_eval::model::{numeric, query_encoder, Batch, Model};
use crate::train_eval::{adam_step, masked_mse_var, metrics, observed_metrics, AdamState, ErrorMetrics, PreparedData, Sample, TrainConfig};

/// One epoch of the training history.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Validation error on observed entries, the early-stopping criterion.
    pub val_mse: f64,
    pub val_mae: f64,
    pub seconds: f64,
}

/// Errors of one split against the clean truth and against the observed
/// corrupted targets.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SplitMetrics {
    pub truth: ErrorMetrics,
    pub observed: ErrorMetrics,
}

pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub empty_mask_batches: usize,
}

/// Stateful optimizer loop around a [`Model`].
pub struct Trainer {
    pub model: Model,
    pub adam: AdamState,
    /// Gradients of the most recent step, by parameter name.
    pub last_grads: Params,
    pub empty_mask_batches: usize,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig, data: &PreparedData) -> Result<Self> {
        let model = Model::new(cfg, data.d, data.train_means.clone())?;
        Ok(Self::from_model(model))
    }

    pub fn from_model(model: Model) -> Self {
        Self {
            model,
            adam: AdamState::default(),
            last_grads: Params::new(),
            empty_mask_batches: 0,
        }
    }

    /// One optimizer step on `samples`; returns the batch loss.
    pub fn train_step(&mut self, samples: &[Sample], epoch: usize, batch_idx: usize) -> Result<f64> {
        self.step(samples, epoch, batch_idx).map_err(|e| numeric(e, epoch, batch_idx))
    }

    fn step(&mut self, samples: &[Sample], epoch: usize, batch_idx: usize) -> Result<f64> {
        let cfg = self.model.cfg.clone();
        let batch = Batch::new(samples, cfg.lookback, cfg.horizon, self.model.d)?;
        let mut tape = Tape::training(sub_seed(cfg.seed, &format!("dropout/{epoch}/{batch_idx}")));
        let model = &self.model;
        let bind = model.params.bind(&mut tape, |n| model.trainable(n));

        let o = if cfg.uses_bank() {
            let z = self.model.stats(&mut tape, &bind, &batch)?;
            let z_val = tape.value(z).clone();
            if self.model.bank.is_none() {
                self.model.init_bank(&z_val)?;
            }
            let o = self.model.represent(&mut tape, &bind, &batch, Some(z))?;

            let mut rng = stage_rng(cfg.seed, &format!("bank/{epoch}/{batch_idx}"));
            let protos = self.model.sample_prototypes(&z_val, &mut rng)?;
            let bank = self.model.bank.as_mut().ok_or(Error::EmptyBank)?;
            for p in &protos {
                bank.write(p)?;
            }
            self.model.counters.writes += protos.len() as u64;

            let theta_q = query_encoder(&self.model.params);
            self.model.enc_p = momentum_update(&self.model.enc_p, &theta_q, cfg.gamma)?;
            o
        } else {
            self.model.represent(&mut tape, &bind, &batch, None)?
        };

        let pred = self.model.head(&mut tape, &bind, o, &batch)?;
        let (loss, empty) = masked_mse_var(&mut tape, pred, &batch.y, &batch.ym, cfg.mask_loss)?;
        if empty {
            self.empty_mask_batches += 1;
            log::warn!("epoch {epoch}, batch {batch_idx}: no observed horizon entries");
        }
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NumericFailure {
                epoch,
                batch: batch_idx,
                detail: format!("loss is {value}"),
            });
        }
        let grads = tape.backward(loss)?;
        let grads = bind.gradients(&tape, &grads);
        adam_step(&mut self.model.params, &grads, &mut self.adam, cfg.lr)?;
        self.last_grads = grads;
        Ok(value)
    }

    /// One chronological pass over `train`; returns the mean batch loss.
    pub fn run_epoch(&mut self, train: &[Sample], epoch: usize) -> Result<f64> {
        if train.is_empty() {
            return Err(Error::Data("no training windows".into()));
        }
        let mut total = 0.0;
        let mut n = 0;
        for (i, chunk) in train.chunks(self.model.cfg.batch_size).enumerate() {
            total += self.train_step(chunk, epoch, i)?;
            n += 1;
        }
        Ok(total / n as f64)
    }
}

/// Forecast errors of `model` over `samples`.
pub fn evaluate(model: &mut Model, samples: &[Sample]) -> Result<SplitMetrics> {
    let preds = model.predict(samples)?;
    let flat: Vec<f64> = preds.concat();
    let truth: Vec<f64> = samples.iter().flat_map(|s| s.truth.iter().copied()).collect();
    let y: Vec<f64> = samples.iter().flat_map(|s| s.y.iter().copied()).collect();
    let ym: Vec<f64> = samples.iter().flat_map(|s| s.ym.iter().copied()).collect();
    Ok(SplitMetrics {
        truth: metrics(&flat, &truth)?,
        observed: observed_metrics(&flat, &y, &ym)?,
    })
}

/// Trains with early stopping on observed validation MSE and returns the
/// best epoch's model, prototype encoder and bank.
pub fn train(cfg: &TrainConfig, data: &PreparedData) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg, data)?;
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let train_loss = trainer.run_epoch(&data.train, epoch)?;
        let val = if data.val.is_empty() {
            SplitMetrics {
                observed: ErrorMetrics { mae: f64::NAN, mse: train_loss },
                ..Default::default()
            }
        } else {
            evaluate(&mut trainer.model, &data.val)?
        };
        let val_mse = val.observed.mse;
        if !val_mse.is_finite() {
            return Err(Error::NumericFailure {
                epoch,
                batch: 0,
                detail: format!("validation MSE is {val_mse}"),
            });
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_mse,
            val_mae: val.observed.mae,
            seconds: started.elapsed().as_secs_f64(),
        });
        log::info!("epoch {epoch}: train loss {train_loss:.6}, val mse {val_mse:.6}");
        if best.as_ref().is_none_or(|(b, _, _)| val_mse < *b) {
            best = Some((val_mse, epoch, trainer.model.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let (_, best_epoch, model) = best.ok_or_else(|| Error::Config("max_epochs must be positive".into()))?;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        empty_mask_batches: trainer.empty_mask_batches,
    })
}
