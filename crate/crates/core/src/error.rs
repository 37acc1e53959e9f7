//! Error type shared across the library.
//!
//! Variants map onto the failure classes surfaced by the CLI: bad
//! configuration, malformed containers, shape mismatches, and numeric
//! degeneracies that make a result meaningless rather than merely inaccurate.

use thiserror::Error;

/// Library-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid option combination or out-of-range parameter.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A file did not parse as the expected container format.
    #[error("format error: {0}")]
    Format(String),

    /// Operands whose shapes cannot be combined.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A quantity required to be nonzero/full-rank collapsed numerically.
    #[error("numeric degeneracy: {0}")]
    Degeneracy(String),

    /// An internal invariant was violated by the caller (e.g. a stale
    /// activation cache handed back to the network).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Prefixes the message with the pipeline stage that failed, keeping the
    /// variant (and therefore the exit code) intact.
    pub fn tagged(self, stage: &str) -> Error {
        match self {
            Error::Config(m) => Error::Config(format!("{stage}: {m}")),
            Error::Format(m) => Error::Format(format!("{stage}: {m}")),
            Error::Dimension(m) => Error::Dimension(format!("{stage}: {m}")),
            Error::Degeneracy(m) => Error::Degeneracy(format!("{stage}: {m}")),
            Error::Contract(m) => Error::Contract(format!("{stage}: {m}")),
            Error::Io(e) => {
                let kind = e.kind();
                Error::Io(std::io::Error::new(kind, format!("{stage}: {e}")))
            }
        }
    }

    /// Process exit code the CLI maps this error onto.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Format(_) | Error::Dimension(_) => 3,
            Error::Degeneracy(_) => 4,
            Error::Contract(_) | Error::Io(_) => 1,
        }
    }
}
