use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error in `{field}`: {message}")]
    Validation { field: &'static str, message: String },

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("degenerate vector at row {row}: norm {norm:e}")]
    Degenerate { row: usize, norm: f64 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("class {class} ({name}) has no samples")]
    Coverage { class: usize, name: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(field: &'static str, message: impl Into<String>) -> Self {
        Error::Validation {
            field,
            message: message.into(),
        }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    /// Process exit code for the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parameter(_) => 2,
            Error::Numerical(_) | Error::Degenerate { .. } => 4,
            _ => 3,
        }
    }
}
