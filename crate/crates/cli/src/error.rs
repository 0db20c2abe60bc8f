use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed point cloud. `line` is 1-based; 0 means the file as a whole.
    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: u64, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Solver(#[from] nys_sink::Error),

    #[error("failed to write CSV: {0}")]
    Csv(#[from] csv::Error),

    #[error("failed to write JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Machine-readable form written in place of a result on failure.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub kind: &'static str,
    pub message: String,
    pub exit_code: i32,
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn kind(&self) -> &'static str {
        use nys_sink::Error as E;
        match self {
            CliError::Parse { .. } => "parse",
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Csv(_) | CliError::Json(_) => "output",
            CliError::Solver(e) => match e.root() {
                E::Input(_) => "invalid_input",
                E::RankExhausted { .. } => "rank_exhausted",
                E::NoConvergence { .. } | E::OracleFailure { .. } => "no_convergence",
                E::RetryExhausted { .. } => "retry_exhausted",
                E::Capacity { .. } => "capacity",
                E::DegenerateLandmarks { .. } => "degenerate_landmarks",
                _ => "numerical",
            },
        }
    }

    /// 2 parse/config, 3 rank exhausted, 4 no convergence, 5 retries
    /// exhausted; 6 and up for the remaining failures. 1 is reserved for a
    /// failed `validate` run.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "parse" | "config" | "invalid_input" => 2,
            "rank_exhausted" => 3,
            "no_convergence" => 4,
            "retry_exhausted" => 5,
            "capacity" => 6,
            "degenerate_landmarks" => 7,
            "io" | "output" => 8,
            _ => 9,
        }
    }

    pub fn report(&self) -> ErrorReport {
        ErrorReport { kind: self.kind(), message: self.to_string(), exit_code: self.exit_code() }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
