//! Error type shared by all modules of the crate.

use std::fmt;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Failures raised by model construction, filtering, smoothing and the
/// covariance machinery.
///
/// Index-contract violations (a step outside `0..=n`, mismatched shapes in
/// hot evaluation paths) are treated as programming errors and panic; the
/// variants below cover data-dependent failures that a caller can meet with
/// well-formed inputs.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A matrix required to be symmetric positive definite failed its
    /// triangular factorization. `step` carries the time index when the
    /// failure happened inside a recursion.
    NotPositiveDefinite {
        what: String,
        step: Option<usize>,
    },
    /// Shapes of supplied matrices/vectors do not conform.
    DimensionMismatch(String),
    /// Every particle log-weight at a step was effectively zero likelihood.
    DegenerateWeights { step: Option<usize> },
    /// All backward-kernel transition densities vanished numerically at the
    /// given evaluation point.
    DegenerateKernel { step: usize, point: Vec<f64> },
    /// A function evaluation produced a non-finite value.
    NonFinite(String),
    /// Invalid run parameters (particle counts, replicate counts, horizons).
    InvalidConfig(String),
}

impl Error {
    /// Attaches a time index to a positive-definiteness failure.
    pub fn at_step(self, k: usize) -> Self {
        match self {
            Error::NotPositiveDefinite { what, .. } => {
                Error::NotPositiveDefinite { what, step: Some(k) }
            }
            Error::DegenerateWeights { .. } => Error::DegenerateWeights { step: Some(k) },
            other => other,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NotPositiveDefinite { what, step: Some(k) } => {
                write!(f, "{what} is not positive definite at step {k}")
            }
            Error::NotPositiveDefinite { what, step: None } => {
                write!(f, "{what} is not positive definite")
            }
            Error::DimensionMismatch(msg) => write!(f, "dimension mismatch: {msg}"),
            Error::DegenerateWeights { step: Some(k) } => {
                write!(f, "degenerate particle weights at step {k}")
            }
            Error::DegenerateWeights { step: None } => {
                write!(f, "degenerate particle weights")
            }
            Error::DegenerateKernel { step, point } => {
                write!(
                    f,
                    "backward kernel degenerate at step {step}, evaluation point {point:?}"
                )
            }
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
        }
    }
}

impl std::error::Error for Error {}
