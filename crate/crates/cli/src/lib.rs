//! Experiment pipeline behind the `convbias` binary.

pub mod artifact;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod plot;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
