//! Error type shared across the engine.

use thiserror::Error;

/// All failure modes of the engine, grouped so callers (notably the CLI)
/// can map them onto their exit-code taxonomy.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or parameter values.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or inconsistent input data. `line` is set when the
    /// problem can be pinned to a line of an input file (1-based).
    #[error("data error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Data {
        message: String,
        line: Option<usize>,
    },

    /// A sentence id required by a regulator lookup is absent from a store.
    #[error("sentence id `{sentence_id}` missing from augmented store (model_id {model_id})")]
    MissingId { sentence_id: String, model_id: u32 },

    /// Cosine similarity (or a metric built on it) was asked for a vector
    /// with norm below 1e-12.
    #[error("zero vector: {0}")]
    ZeroVector(String),

    /// Tensor or batch dimensions do not line up.
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    /// A loss or gradient became NaN or infinite.
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data {
            message: msg.into(),
            line: None,
        }
    }

    pub fn data_at(msg: impl Into<String>, line: usize) -> Self {
        Error::Data {
            message: msg.into(),
            line: Some(line),
        }
    }

    pub fn shape(context: &str, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            context: context.to_string(),
            expected: expected.into(),
            actual: actual.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
