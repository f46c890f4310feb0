//! Numerical backbone: special functions, weighted regression, bounded
//! Levenberg–Marquardt and seeded Monte Carlo helpers.

mod linear;
mod lm;
pub mod montecarlo;
mod special;

use thiserror::Error;

pub use linear::{linear_fit, LinearFit};
pub use lm::{lm_fit, Convergence, FitProblem, FitReport};
pub use special::{bessel_j, bessel_j0, laguerre};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("invalid fit problem: {0}")]
    InvalidProblem(String),

    #[error("model is not finite at the initial parameters")]
    NonFiniteModel,

    #[error("no convergence after {iterations} iterations (chi2 = {chi2:.6e}, params = {params:?})")]
    MaxIterations { iterations: usize, chi2: f64, params: Vec<f64> },

    #[error("singular normal matrix; poorly identified parameters: {hint}")]
    Singular { hint: String },

    #[error("degenerate abscissae: need at least two distinct x values")]
    DegenerateAbscissa,
}
