use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FwerError {
    #[error("invalid argument: {0}")]
    Domain(String),

    #[error(
        "quadrature did not converge: estimate {estimate:e}, error estimate {error:e} \
         exceeds tolerance {tolerance:e} after {evaluations} refinements"
    )]
    NonConvergence {
        estimate: f64,
        error: f64,
        tolerance: f64,
        evaluations: usize,
    },
}

pub type Result<T> = std::result::Result<T, FwerError>;

pub(crate) fn domain(msg: impl Into<String>) -> FwerError {
    FwerError::Domain(msg.into())
}
