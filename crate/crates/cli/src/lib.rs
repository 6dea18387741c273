//! Command-line front end for `esilc`: scenario files in, CSV and JSON out.
//!
//! Exit codes: 0 on success, 2 for parse or validation errors, 3 when the
//! controller cannot be synthesized, 4 when a single trial becomes
//! infeasible. I/O failures exit with 1.

pub mod bench;
pub mod commands;
pub mod scenario;

use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Parse(String),
    #[error("synthesis failed: {0}")]
    Synthesis(String),
    #[error("trial infeasible: {0}")]
    Infeasible(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Parse(_) => 2,
            CliError::Synthesis(_) => 3,
            CliError::Infeasible(_) => 4,
            CliError::Io(_) => 1,
        })
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
