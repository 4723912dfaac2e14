//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the library.
///
/// `Usage` marks violated call contracts (bad indices, wrong lengths),
/// `Config` marks inconsistent model or layer configuration, `Format`
/// marks malformed input files, and `Accounting` marks privacy-budget
/// violations or unreachable targets.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("accounting error: {0}")]
    Accounting(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
