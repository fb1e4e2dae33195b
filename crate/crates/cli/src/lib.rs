//! Library side of the `pav` command: config, backend wiring, batch
//! manifest and the subcommand implementations.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod wiring;

pub use config::AppConfig;
pub use error::CliError;
