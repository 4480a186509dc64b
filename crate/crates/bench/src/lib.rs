//! Experiment grid for threat-text classification: configuration, per-method
//! pipelines, the `(scenario, seed, method, upsampling)` runner, result files
//! and table rendering.

pub mod artifact;
pub mod cli;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod results;
pub mod runner;
pub mod table;

pub use error::{BenchError, Result};
