//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
///
/// `Config` marks rejected inputs (bad grid sizes, inconsistent stepper
/// settings, windows outside the domain). `BlowUp` marks a numerically dead
/// path: a non-finite value or an amplitude excursion past the configured
/// ceiling. `NoiseBound` fires when the per-step Hilbert-Schmidt bound check
/// fails against the certified constants. `Invariant` marks a failed
/// construction-time certification (weight conditions, noise tail, ...).
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("blow-up detected at t={t}: {detail}")]
    BlowUp { t: f64, detail: String },

    #[error("noise bound violated at t={t}: hs_norm_sq={hs_sq:e} > certified {bound_sq:e}")]
    NoiseBound { t: f64, hs_sq: f64, bound_sq: f64 },

    #[error("invariant violation: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn invariant(msg: impl Into<String>) -> Self {
        Error::Invariant(msg.into())
    }

    /// True for errors that should be reported as bad input (CLI exit code 2)
    /// rather than as a numerical/verification failure (exit code 1).
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
