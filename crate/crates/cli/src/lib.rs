//! Experiment runner: simulate datasets, reconstruct them with a
//! configured method, score the results and run the built-in oracles.

pub mod array;
pub mod config;
pub mod dataset;
pub mod error;
pub mod recon;
pub mod verify;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
