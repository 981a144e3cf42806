//! Library surface behind the `damo` binary: config parsing, experiment
//! orchestration, file emission, and report aggregation.

pub mod aggregate;
pub mod config;
pub mod experiment;
pub mod output;

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Assertion(String),
    Io(std::io::Error),
    Core(damo_core::Error),
    Json(serde_json::Error),
    Csv(csv::Error),
    Other(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(s) | CliError::Assertion(s) | CliError::Other(s) => write!(f, "{s}"),
            CliError::Io(e) => write!(f, "io: {e}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Json(e) => write!(f, "json: {e}"),
            CliError::Csv(e) => write!(f, "csv: {e}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Assertion(_) => 1,
            CliError::Core(e) => match e {
                damo_core::Error::Numerical(_)
                | damo_core::Error::DivergenceGuard { .. }
                | damo_core::Error::SupportViolation { .. } => 1,
                _ => 2,
            },
            _ => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<damo_core::Error> for CliError {
    fn from(e: damo_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Json(e)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Csv(e)
    }
}
