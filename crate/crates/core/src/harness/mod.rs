//! Experiment orchestration: configuration, per-seed pipeline with resumable
//! artifacts, ablations and reports.

pub mod ablation;
pub mod config;
pub mod pipeline;
pub mod report;

pub use ablation::{run_ablations, AblationReport, Axis, AxisSelection};
pub use config::ExperimentConfig;
pub use pipeline::{run_pipeline, RunManifest, Stage};
