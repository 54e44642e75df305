//! Command-line driver for the embedding pipeline: configuration, run
//! directories and the `bilip` subcommands.

pub mod artifacts;
pub mod commands;
pub mod config;

pub use artifacts::{verify_dir, Manifest};
pub use commands::{run, Cli, Command};
pub use config::PipelineConfig;
