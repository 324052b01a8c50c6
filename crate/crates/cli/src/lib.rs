//! Command-line front end for the matmuon experiment harness: JSON configs
//! in, CSV traces and JSON summaries out.

pub mod check;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::{execute, Command};
pub use config::ExperimentConfig;
pub use error::{CliError, Result};
