//! Experiment runner for vanilla and decoupled GRPO on the synthetic
//! hybrid-reasoning task: config files and presets, metric logs, property
//! checks and SVG charts.

pub mod analysis;
pub mod commands;
pub mod config;
pub mod error;
pub mod metrics;
pub mod run;
pub mod svg;

pub use config::{Overrides, RunConfig};
pub use error::{CliError, CliResult};
