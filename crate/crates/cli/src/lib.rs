//! Command implementations behind the `sfm` binary.

pub mod commands;
pub mod config;

pub use commands::CliError;
pub use config::RunConfig;
