//! Configuration, drivers and output for the `porous-duu` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use config::RunConfig;
pub use error::CliError;
