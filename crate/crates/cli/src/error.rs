use std::path::Path;

/// Front-end failures, each mapped to a stable process exit code so
/// scripts can branch on the failure class.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Malformed input: bad CSV cell, missing column, ragged row.
    /// `line` is 1-based; 0 means the position is unknown.
    #[error("parse error at line {line}: {detail}")]
    Parse { line: u64, detail: String },

    #[error(transparent)]
    Core(#[from] backshift::Error),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Parse { .. } => 2,
            Self::Core(backshift::Error::NeedMultipleEnvironments) => 3,
            Self::Core(backshift::Error::ModelAssumptionsViolated(_)) => 4,
            Self::Core(backshift::Error::StabilityFailed { .. }) => 5,
            _ => 1,
        }
    }
}
