//! Command-line front end for the `vcformer` crate.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;

pub use commands::run;
pub use error::CliError;
