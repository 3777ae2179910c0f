//! Orchestration: configs and presets, experiment grids, reward-gap
//! histograms, file-based stages and the run manifest.

pub mod config;
pub mod experiment;
pub mod histogram;
pub mod manifest;
pub mod stages;

pub use config::{ExperimentConfig, RmVariant, PRESETS};
pub use manifest::RunManifest;
pub use stages::Run;
