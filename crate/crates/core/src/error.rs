//! Error type shared by every module.

use crate::sampling::{Population, SampleLedger};

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A numeric argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid or inconsistent configuration.
    #[error("configuration error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// Malformed response from an external observation source.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// An inverse-binomial call exceeded its draw budget.
    #[error("draw cap of {cap} exceeded on population {population}")]
    DrawCap {
        population: Population,
        cap: u64,
        ledger: SampleLedger,
    },

    /// An external observation source ran dry.
    #[error("observation source exhausted on population {population}")]
    SourceExhausted {
        population: Population,
        ledger: SampleLedger,
    },

    /// Iterative numerics failed to converge.
    #[error("convergence failure: {0}")]
    Convergence(String),

    /// An internal invariant was violated.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Domain(_) => 2,
            Error::Protocol(_) | Error::SourceExhausted { .. } => 3,
            Error::DrawCap { .. } => 4,
            Error::Convergence(_) | Error::Internal(_) | Error::Io(_) | Error::Csv(_) => 1,
        }
    }

    /// Ledger snapshot carried by sampling aborts.
    pub fn ledger(&self) -> Option<&SampleLedger> {
        match self {
            Error::DrawCap { ledger, .. } | Error::SourceExhausted { ledger, .. } => Some(ledger),
            _ => None,
        }
    }
}
