//! Crate-wide error type and result alias.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor shapes or indices handed to a numeric op.
    #[error("{op}: shape error: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A forward op produced NaN or infinity.
    #[error("{op}: non-finite value in output")]
    NonFinite { op: &'static str },

    /// Malformed input data (corpus records, embeddings, checkpoints).
    #[error("data error: {0}")]
    Data(String),

    /// Invalid configuration; the message names the offending key.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Process exit code for the CLI: 1 usage, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 1,
            Error::NonFinite { .. } => 3,
            Error::Shape { .. } | Error::Data(_) | Error::Io(_) => 2,
        }
    }
}
