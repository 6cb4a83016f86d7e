//! Configuration and subcommand implementations behind the `headdet` binary.

pub mod commands;
pub mod config;

pub use config::{parse_config, NormalizationMode, RunConfig};
