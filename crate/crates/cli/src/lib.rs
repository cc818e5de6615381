//! Command-line experiments for the `excusum` change-detection toolkit.

pub mod commands;
pub mod config;
pub mod demo;
pub mod output;

pub use commands::{run, Cli, Command, ErrorFormat, Outcome};
pub use config::{ConfigError, ExperimentConfig};
