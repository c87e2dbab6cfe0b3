//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller violated an input contract (dimension mismatch, bad range, ...).
    #[error("input: {0}")]
    Input(String),

    /// The transform eigen-solve failed even after jitter escalation.
    #[error("fit failed: {reason} (diag norm {diag_norm:.3e}, jitter {jitter:.1e})")]
    Fit {
        reason: String,
        diag_norm: f64,
        jitter: f64,
    },

    /// Requested entity does not exist or is not visible to the caller.
    #[error("not found: {0}")]
    NotFound(String),

    /// Repository persistence or consistency failure.
    #[error("store: {0}")]
    Store(String),

    /// Wire-protocol framing or body failure.
    #[error("protocol: {0}")]
    Protocol(String),

    /// Config file parse failure; `line` is 1-based.
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
}
