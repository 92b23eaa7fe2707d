use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] cotwave::Error),

    /// Bad user input: unreadable file, malformed CSV, invalid flag value.
    #[error("{0}")]
    Input(String),

    /// Well-formed input that cannot be estimated from (empty arm, constant column).
    #[error("{0}")]
    Degenerate(String),

    #[error("cannot write {}: {source}", path.display())]
    Output { path: PathBuf, source: std::io::Error },

    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    /// 0 success, 2 user or input error, 3 degenerate data, 1 internal failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(cotwave::Error::Degenerate(_)) | CliError::Degenerate(_) => 3,
            CliError::Core(_) | CliError::Input(_) => 2,
            CliError::Output { .. } | CliError::Internal(_) => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
