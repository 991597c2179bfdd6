use thiserror::Error;

/// Errors produced anywhere in the design pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("coefficient out of range: {0}")]
    CoefficientRange(String),

    #[error("porosity {value} at node {node} leaves the admissible interval ({lower}, {upper})")]
    PorosityRange { node: usize, value: f64, lower: f64, upper: f64 },

    #[error("linear solver failed: {message} (relative residual {residual:e})")]
    Solver { message: String, residual: f64 },

    #[error("ill-posed constraint set: {0}")]
    Constraint(String),

    #[error("risk evaluation is stale: {0}")]
    Stale(String),

    #[error("optimization did not converge: {0}")]
    Convergence(String),

    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
