//! Mixed quantum–classical fluid models on periodic grids, with the
//! conserved functionals and algebraic identities of the continuum theory
//! exposed as testable diagnostics.

pub mod brackets;
pub mod diagnostics;
pub mod error;
pub mod fields;
pub mod poisson;
pub mod grid;
pub mod integrator;
pub mod models;
pub mod synth;
pub mod hermitian;
pub mod verification;

pub use error::{QcError, Result};

/// Complex double, the scalar type of the quantum sector.
pub type C64 = num_complex::Complex<f64>;
