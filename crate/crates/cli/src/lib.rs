//! Experiment runner for the `qsntk` engine: configuration, presets and
//! the subcommands behind the `qsntk` binary.

pub mod config;
pub mod error;
pub mod experiment;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
pub use experiment::Experiment;
