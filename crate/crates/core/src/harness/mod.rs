//! Experiment harness: configuration, datasets, metrics and runs.

pub mod checks;
pub mod config;
pub mod dataset;
pub mod metrics;
pub mod run;

pub use config::RunConfig;
pub use dataset::{Dataset, Tick};
pub use run::{run_experiment, write_outputs, RunOutput, Summary};
