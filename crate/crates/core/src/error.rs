//! Error type shared across the toolkit.

use thiserror::Error;

/// Unified error for all library operations.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for an operation.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// An argument violates a precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A binary file does not match its expected format.
    #[error("format error: {0}")]
    Format(String),

    /// A sequence or buffer has the wrong length.
    #[error("length error: {0}")]
    Length(String),

    /// Bad or inconsistent run configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A per-clip signal required by a filter rule is absent.
    #[error("missing signal: {0}")]
    SignalMissing(String),

    /// A non-finite value surfaced during numeric work.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// The optimizer rejected an update.
    #[error("optimizer error: {0}")]
    Optimizer(String),

    /// An operation was called in an invalid state.
    #[error("state error: {0}")]
    State(String),

    /// Text could not be tokenized against the active vocabulary.
    #[error("tokenizer error: {0}")]
    Tokenizer(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code category: config errors 2, data errors 3,
    /// numeric failures 4.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::NonFinite(_) | Error::Optimizer(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
