//! Experiment driver around the `daomix` library: run configuration files,
//! corpus IO, binary checkpoints, CSV run logs, and the orchestration the
//! `daomix` binary exposes as subcommands.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod logs;
pub mod runner;

pub use error::{CliError, Result};
