//! Library side of the `neural-nmf` command-line tool: configuration,
//! input resolution, trial execution, and the subcommands.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod experiment;

pub use config::RunConfig;
