//! Error taxonomy shared by every layer of the crate.
//!
//! Variants carry enough context (cell, time, measured value) to locate a
//! failure in a run without re-running it; the short kebab-case prefix of
//! each message is stable and is what callers and tests match on.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum QcError {
    #[error("unsupported-operation: {0}")]
    UnsupportedOperation(String),

    #[error("invalid-grid: {0}")]
    InvalidGrid(String),

    #[error("shape-error: {0}")]
    ShapeError(String),

    /// Periodic Poisson solvability violated: the right-hand side has a
    /// nonzero mean component.
    #[error("incompatible-rhs: rhs mean {mean:.6e} exceeds solvability tolerance {tol:.1e} (scale {scale:.6e})")]
    IncompatibleRhs { mean: f64, tol: f64, scale: f64 },

    #[error("eigen-failure: Jacobi off-diagonal norm {off:.3e} after {sweeps} sweeps")]
    EigenFailure { sweeps: usize, off: f64 },

    #[error("vacuum-error: D = {value:.6e} at cell ({i}, {j}, {k})")]
    VacuumError { value: f64, i: usize, j: usize, k: usize },

    #[error("blow-up: non-finite {what} at t = {t:.6e}, cell ({i}, {j}, {k})")]
    BlowUp { what: &'static str, t: f64, i: usize, j: usize, k: usize },

    #[error("unnormalized-state: max |‖ψ‖ − 1| = {drift:.3e} exceeds {tol:.1e}")]
    UnnormalizedState { drift: f64, tol: f64 },

    #[error("log-domain-error: c̃ = {value:.6e} at cell ({i}, {j}, {k}) is not positive")]
    LogDomainError { value: f64, i: usize, j: usize, k: usize },

    #[error("requires-pure-state: {0}")]
    RequiresPureState(String),

    #[error("degenerate-loop: nodes {a} and {b} coincide")]
    DegenerateLoop { a: usize, b: usize },

    #[error("unsupported-model: {0}")]
    UnsupportedModel(String),
}

pub type Result<T> = std::result::Result<T, QcError>;
