//! Config-driven experiment pipelines.

pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod plots;
pub mod studies;

pub use config::{ExperimentConfig, SystemConfig};
pub use manifest::RunManifest;
pub use pipeline::{generate_dataset, run_pipeline, DatasetLayout, PipelineOutcome, Stage};
pub use studies::{ekf_baseline, gain_matrix, noise_color_study, parameter_sweep};
