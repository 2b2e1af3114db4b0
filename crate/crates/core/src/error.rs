use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the monitoring engine and its tooling.
#[derive(Debug, Error)]
pub enum Error {
    /// A covariate assignment, group or table entry does not fit the schema.
    #[error("schema violation: {0}")]
    SchemaViolation(String),

    /// A group has zero base preponderance and cannot be tested.
    #[error("degenerate group {group}: base preponderance is zero")]
    DegenerateGroup { group: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A power calculator was asked for a bound that does not exist.
    #[error("no finite bound: {0}")]
    NoFiniteBound(String),

    #[error("monitor stopped at t={t}; no further reports accepted")]
    MonitorStopped { t: u64 },

    #[error("snapshot error: {0}")]
    Snapshot(String),

    /// Reporting assumptions violate a precondition of the harm conversion.
    #[error("assumption violation: {0}")]
    AssumptionViolation(String),

    #[error("relative risk undefined: {0}")]
    UndefinedRr(String),

    /// Row-level data problem in an input file.
    #[error("{}:{line}: {message}", path.display())]
    Data {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::InvalidParameter(_)
            | Error::AssumptionViolation(_)
            | Error::DegenerateGroup { .. } => 2,
            Error::SchemaViolation(_)
            | Error::Data { .. }
            | Error::Io { .. }
            | Error::Snapshot(_) => 3,
            Error::NoFiniteBound(_) | Error::MonitorStopped { .. } | Error::UndefinedRr(_) => 4,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
