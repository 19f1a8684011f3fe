use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter lies outside the domain supported by a kernel or generator.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Residual diagonal went negative beyond round-off during a factorization,
    /// or a matrix expected to be PSD is not.
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    /// `n R^2 <= delta * lambda`: the logarithm in the rank bound is not positive.
    #[error("rank bound is vacuous: n*R^2 = {n_r2:e} <= delta*lambda = {delta_lambda:e}")]
    VacuousBound { n_r2: f64, delta_lambda: f64 },

    #[error("newton solver did not converge after {iterations} iterations (gradient norm {grad_norm:e}, tolerance {tolerance:e})")]
    NonConvergence {
        iterations: usize,
        grad_norm: f64,
        tolerance: f64,
    },

    #[error("fit mode does not match prediction context: {0}")]
    ModeMismatch(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// True for failures caused by floating-point behaviour rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NumericalBreakdown(_) | Error::NonConvergence { .. }
        )
    }
}
