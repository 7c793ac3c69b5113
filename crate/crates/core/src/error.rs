use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-positive diffusion coefficient {value} at node {node}")]
    NonPositiveDiffusion { node: usize, value: f64 },

    #[error("ellipticity violated: {0}")]
    Ellipticity(String),

    #[error("singular operator: zero pivot at row {row}")]
    Singular { row: usize },

    #[error("operator is not strongly positive: {0}")]
    NotStronglyPositive(String),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("degenerate threshold: {0}")]
    Degenerate(String),

    #[error("invalid model: {0}")]
    Model(String),

    #[error("continuation failed: {0}")]
    Continuation(String),
}

pub type Result<T> = std::result::Result<T, Error>;
