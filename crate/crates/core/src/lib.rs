//! Evaluation framework for promptable video segmentation on surgical video.

pub mod dataset;
pub mod mask;
pub mod prompt;
pub mod propagation;
pub mod session;
pub mod mock;
pub mod conformance;
pub mod autoseg;
pub mod bridge;
pub mod metrics;
pub mod finetune;
pub mod experiment;
