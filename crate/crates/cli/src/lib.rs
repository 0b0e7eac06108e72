//! Command-line driver for the `rram-mcmc` simulator: configuration files,
//! bundled presets, experiment orchestration and CSV/JSON output.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::{run, Report};
pub use config::{ExperimentConfig, Overrides};
pub use error::CliError;
