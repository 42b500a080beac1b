use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (empty shard, non-positive power budget, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Vector length disagreement between operands.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// A computation produced NaN/Inf.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Iterative solver exhausted its budget; carries the best iterate seen.
    #[error("solver did not converge: residual {residual:.3e} after {iters} iterations")]
    NonConvergence {
        best: Vec<f64>,
        residual: f64,
        iters: usize,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
