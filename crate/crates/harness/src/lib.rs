//! Experiment harness: configuration, the two-stage training pipeline,
//! fixed-parameter evaluation, and report generation.

pub mod config;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod experiments;
pub mod optim;
pub mod report;
pub mod trainer;

pub use config::RunConfig;
pub use error::{HarnessError, Result};
