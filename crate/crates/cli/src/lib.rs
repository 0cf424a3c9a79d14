//! Library half of the `ogpsa` binary: config parsing, subcommands and the
//! verification matrix. Kept separate so integration tests can drive it.

pub mod commands;
pub mod config;
pub mod error;
pub mod svg;
pub mod verify;

pub use error::CliError;
