//! Batch pipelines around `lama-core`: simulation, reconstruction, Init-Net
//! training, perturbation stability and trace verification.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod stability;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
pub use lama_core;
