use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error on line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// An iterative method ran out of iterations. `residual` is the last
    /// measured residual, `trace` the residual history.
    #[error("{what} did not converge within {iterations} iterations (residual {residual:.3e})")]
    Budget {
        what: &'static str,
        iterations: usize,
        residual: f64,
        trace: Vec<f64>,
    },

    #[error("step size too large (gamma = {gamma:.3e}): {message}")]
    Step { gamma: f64, message: String },

    #[error("enumeration needs {count} states, budget is {cap}")]
    Enumeration { count: u128, cap: u128 },

    #[error("projection stopped at residual {residual:.3e} after {sweeps} sweeps")]
    Tolerance { residual: f64, sweeps: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
