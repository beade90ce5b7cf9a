use thiserror::Error;

use crate::fvp::CompatibilityReport;

/// Errors raised by operator construction, evolution and the final value solvers.
#[derive(Error, Debug, Clone)]
pub enum Error {
    /// A Gram table is not Hermitian.
    #[error("{table} is not Hermitian (asymmetry {asymmetry:e})")]
    NotHermitian { table: &'static str, asymmetry: f64 },

    /// A Gram table is not positive definite.
    #[error("{table} is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { table: &'static str, min_eigenvalue: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The inverse semigroup would leave the floating point range.
    #[error("overflow in e^(tA) at mode {mode} (log-magnitude {log_magnitude:.1})")]
    Overflow { mode: usize, log_magnitude: f64 },

    /// Final data fails the compatibility test; the report carries the evidence.
    #[error("incompatible final data: verdict {}", .0.verdict)]
    Incompatible(Box<CompatibilityReport>),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("insufficient spectrum: need at least {needed} modes, have {found}")]
    InsufficientSpectrum { needed: usize, found: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
