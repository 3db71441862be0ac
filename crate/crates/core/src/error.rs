//! Error types shared across the crate.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by model construction, numerical routines, and recovery.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A state lies outside the model domain, or a parameter leaves the
    /// mathematically meaningful range (e.g. a nonnegative eigenvalue where a
    /// negative one is required).
    #[error("domain error: {0}")]
    Domain(String),

    /// A field produced a non-finite value where a finite one was required.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// The caller violated a precondition (empty grid, malformed weights, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// A function required to be positive was nonpositive at a sampled state.
    #[error("positivity error: {0}")]
    Positivity(String),

    /// The operator is not subcritical where subcriticality is required, or
    /// boundary solutions degenerate (proportional / oscillating).
    #[error("criticality error: {0}")]
    Criticality(String),

    /// A bracketing or bisection search failed within its budget.
    #[error("search error: {0}")]
    Search(String),

    /// Quadrature failed to converge within its budget.
    #[error("quadrature error: {0}")]
    Quadrature(String),

    /// Floating-point breakdown (overflow of a normalized quantity, singular
    /// matrix, ...).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The recovery directive cannot be satisfied on this model.
    #[error("recovery infeasible: {0}")]
    Infeasible(String),

    /// Expression or file syntax error.
    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
