use thiserror::Error;

/// Errors produced by the VLSF toolbox.
#[derive(Debug, Error)]
pub enum Error {
    /// A numeric argument lies outside the domain of the function.
    #[error("domain error in {function}: {detail}")]
    Domain {
        function: &'static str,
        detail: String,
    },

    /// The requested design or schedule does not exist for these parameters.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// An iterative solver ran out of iterations or stalled.
    #[error("no convergence after {iterations} iterations (last iterate {last_iterate}, residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        last_iterate: f64,
        residual: f64,
    },

    /// A multidimensional solver failed; carries the residual vector.
    #[error("system solve did not converge after {iterations} iterations, residuals {residuals:?}")]
    SystemNonConvergence {
        iterations: usize,
        residuals: Vec<f64>,
    },

    /// The computation would exceed a configured resource budget.
    #[error("resource limit exceeded: {0}")]
    Resource(String),

    /// Inconsistent shapes between related inputs.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Invalid user input detected before any work was done.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(function: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            function,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
