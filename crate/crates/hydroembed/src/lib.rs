//! File formats, synthetic data and the experiment harness around
//! `hydroembed-core`.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod specfile;
pub mod synth;
pub mod timing;
pub mod wav;

pub use config::ExperimentConfig;
