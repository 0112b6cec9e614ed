use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent configuration: shape mismatches, unknown operator ids,
    /// invalid hyper-parameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// Invalid input data (image too small, inconsistent pyramid, ...).
    #[error("input error: {0}")]
    Input(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed container or header bytes.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },

    /// Entropy-coded payload cannot be decoded.
    #[error("decode error at byte {offset}: {msg}")]
    Decode { offset: usize, msg: String },

    /// The codestream was produced with different operator weights.
    #[error("model digest mismatch: codestream was encoded with different weights")]
    DigestMismatch,

    /// Non-finite values or diverging optimisation.
    #[error("numeric divergence: {0}")]
    Numeric(String),

    /// A metric could not be evaluated (e.g. no quality overlap).
    #[error("evaluation error: {0}")]
    Evaluation(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
}
