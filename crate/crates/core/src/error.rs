use thiserror::Error;

use crate::fitkit::FitError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    /// Fock-space cutoff too small for the requested state.
    #[error("truncation error: population at n_max = {n_max} is {tail:.3e}; use n_max >= {suggested}")]
    Truncation { n_max: usize, tail: f64, suggested: usize },

    #[error("no pseudopotential minimum found: {0}")]
    SearchFailed(String),

    #[error("unstable operating point: {0}")]
    Unstable(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("outside validity range: {0}")]
    OutOfValidity(String),

    #[error("integration failed: {0}")]
    Integration(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Fit(#[from] FitError),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
