//! Operator entry point for the `s4m` binary: configuration loading and the
//! subcommand bodies, callable without spawning a process.

pub mod app;
pub mod commands;
pub mod config;
pub mod error;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
