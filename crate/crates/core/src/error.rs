use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Unsupported or inconsistent configuration value.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller-supplied argument violates an operation's precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Input data cannot be used as given. `row` is zero-based when present.
    #[error("data error{}: {message}", .row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    Data { row: Option<usize>, message: String },

    /// Data is well formed but statistically degenerate (empty arm, zero range).
    #[error("degenerate data: {0}")]
    Degenerate(String),
}

impl Error {
    pub(crate) fn data(message: impl Into<String>) -> Self {
        Error::Data { row: None, message: message.into() }
    }

    pub(crate) fn data_at(row: usize, message: impl Into<String>) -> Self {
        Error::Data { row: Some(row), message: message.into() }
    }
}
