//! Config-driven experiments on top of `ovanet-core`: single runs, sweeps
//! over openness, known classes and λ, the HNCS × OEM ablation, and the
//! CSV/JSON files they leave behind.

pub mod config;
pub mod error;
pub mod experiment;
pub mod sweep;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use experiment::{execute, run_experiment, RunOutput, RunSummary};
pub use sweep::{ablation_grid, known_class_sweep, lambda_sweep, openness_sweep, SweepResult};
