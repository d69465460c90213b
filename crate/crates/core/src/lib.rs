pub mod atpm;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod mds;
pub mod rng;
pub mod ssm;
pub mod train_eval;

pub use error::{Error, Result};
