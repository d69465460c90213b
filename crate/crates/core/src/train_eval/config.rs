use serde::{Deserialize, Serialize};

use crate::atpm::{BankConfig, EncoderConfig};
use crate::error::{Error, Result};
use crate::mds::BlockConfig;

/// Forecasting method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Prototype bank + mask-aware backbone.
    S4m,
    /// Plain S4 on mean-imputed input.
    Mean,
    /// Plain S4 on forward-filled input.
    Ffill,
    /// Plain S4 on input decayed from the last observation toward the mean.
    Decay,
}

impl Method {
    pub fn is_baseline(self) -> bool {
        !matches!(self, Method::S4m)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::S4m => "s4m",
            Method::Mean => "mean",
            Method::Ffill => "ffill",
            Method::Decay => "decay",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "s4m" => Ok(Method::S4m),
            "mean" => Ok(Method::Mean),
            "ffill" => Ok(Method::Ffill),
            "decay" => Ok(Method::Decay),
            other => Err(Error::Config(format!(
                "unknown method `{other}` (expected s4m, mean, ffill or decay)"
            ))),
        }
    }
}

/// Everything a training run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Momentum of the prototype encoder.
    pub gamma: f64,
    pub k1: usize,
    pub k2: usize,
    pub top_k: usize,
    pub tau1: f64,
    pub tau2: f64,
    /// Encoder slice length `s`.
    pub window: usize,
    /// Encoder convolution height `W`.
    pub conv_width: usize,
    /// Prototypes written per window.
    pub n_samples: usize,
    pub k_init: usize,
    /// SSM state size `H`.
    pub state: usize,
    /// Feature width `R`.
    pub r: usize,
    pub f_ch: usize,
    pub n_blocks: usize,
    pub dropout: f64,
    pub lookback: usize,
    pub horizon: usize,
    pub train_stride: usize,
    pub eval_stride: usize,
    pub seed: u64,
    pub no_mask: bool,
    pub no_atpm: bool,
    /// Restrict the loss to observed horizon entries.
    pub mask_loss: bool,
    /// Train the HiPPO state matrices.
    pub train_a: bool,
    /// Fill fully missing variables with the training mean.
    pub fallback: bool,
    pub decay_lambda: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::S4m,
            lr: 1e-3,
            batch_size: 16,
            max_epochs: 30,
            patience: 5,
            gamma: 0.99,
            k1: 30,
            k2: 10,
            top_k: 3,
            tau1: 0.9,
            tau2: 0.6,
            window: 16,
            conv_width: 3,
            n_samples: 4,
            k_init: 4,
            state: 16,
            r: 32,
            f_ch: 64,
            n_blocks: 2,
            dropout: 0.1,
            lookback: 96,
            horizon: 24,
            train_stride: 1,
            eval_stride: 1,
            seed: 0,
            no_mask: false,
            no_atpm: false,
            mask_loss: true,
            train_a: false,
            fallback: true,
            decay_lambda: 10.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("n_samples", self.n_samples),
            ("k_init", self.k_init),
            ("lookback", self.lookback),
            ("horizon", self.horizon),
            ("train_stride", self.train_stride),
            ("eval_stride", self.eval_stride),
        ];
        if let Some((k, _)) = pos.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{k}` must be positive")));
        }
        if self.horizon > self.lookback {
            return Err(Error::Config(format!(
                "horizon {} exceeds look-back {}",
                self.horizon, self.lookback
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be >= 0", self.lr)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        if self.decay_lambda <= 0.0 {
            return Err(Error::Config("decay_lambda must be positive".into()));
        }
        if self.n_samples > self.lookback {
            return Err(Error::Config(format!(
                "n_samples {} exceeds look-back {}",
                self.n_samples, self.lookback
            )));
        }
        if self.method.is_baseline() && (self.no_mask || self.no_atpm) {
            return Err(Error::Config(
                "ablation flags apply only to the s4m method".into(),
            ));
        }
        self.bank().validate()?;
        self.encoder().validate()?;
        self.blocks().validate()
    }

    pub fn bank(&self) -> BankConfig {
        BankConfig {
            k1: self.k1,
            k2: self.k2,
            top_k: self.top_k,
            tau1: self.tau1,
            tau2: self.tau2,
        }
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            window: self.window,
            conv_width: self.conv_width,
            r: self.r,
            state: self.state,
            dropout: self.dropout,
        }
    }

    pub fn blocks(&self) -> BlockConfig {
        BlockConfig {
            r: self.r,
            f_ch: self.f_ch,
            n_blocks: self.n_blocks,
            state: self.state,
            dropout: self.dropout,
            dual: self.method == Method::S4m,
        }
    }

    /// Whether the prototype bank path runs at all.
    pub fn uses_bank(&self) -> bool {
        self.method == Method::S4m && !self.no_atpm
    }
}
