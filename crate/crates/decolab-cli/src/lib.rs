//! Scenario-driven front end for the `decolab` engines.
//!
//! The binary reads a TOML scenario file with a strict schema (unknown keys
//! are rejected by name, physical quantities carry explicit unit suffixes),
//! dispatches to the requested engine, writes CSV output files whose bytes
//! depend only on `(scenario, seed)`, and prints a key-value run report with
//! one line per consistency check.

pub mod checks;
pub mod report;
pub mod run;
pub mod scenario;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Scenario schema or value violation; the message names the offending
    /// key or invariant.
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("engine: {0}")]
    Engine(#[from] decolab::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;
