//! Std companion to `mkmed-core`: dataset files, checkpoints, reports,
//! TOML configuration and the command implementations behind the CLI.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod report;

pub use error::{CliError, CliResult};
