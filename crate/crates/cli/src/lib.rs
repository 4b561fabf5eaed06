//! Experiment plumbing for the `compfilt` command: configuration files,
//! dataset ingestion and report writing.

pub mod config;
pub mod experiment;
pub mod manifest;

pub use config::{DataSource, ExperimentConfig};
pub use experiment::{run_experiment, Report};
pub use manifest::{ingest, DatasetManifest};
