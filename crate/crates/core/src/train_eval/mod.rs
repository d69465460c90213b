//! Training loop, inference, losses, metrics, optimizer and the imputation
//! baselines.

mod adam;
mod baseline;
mod config;
mod metrics;
mod model;
mod prepare;
mod report;
mod trainer;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPS};
pub use baseline::baseline_impute;
pub use config::{Method, TrainConfig};
pub use metrics::{masked_mse_loss, masked_mse_var, metrics, observed_metrics, ErrorMetrics};
pub use model::{query_encoder, BankCounters, Batch, Model, COMBINE, DECAY, ENC, PROJ_B, PROJ_W};
pub use prepare::{prepare, PreparedData, Sample, SPLIT};
pub use report::{history_csv, metrics_csv, timing_csv, write_text};
pub use trainer::{evaluate, train, EpochRecord, SplitMetrics, Trainer, TrainOutcome};
