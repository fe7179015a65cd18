//! Scenario-file front end for the `lure` solver.

pub mod commands;
pub mod error;
pub mod plot;
pub mod scenario;

pub use commands::{run, Cli, Command};
pub use error::CliError;
pub use scenario::{emit, load_scenario, parse_scenario, read_scenario, Built, Scenario};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book {}
