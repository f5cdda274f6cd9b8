//! Dense linear algebra for the synthesis and checking passes.
//!
//! Everything here works on small dense matrices (dimension ≤ ~30) and is
//! written for accuracy rather than speed: Jacobi rotations for symmetric
//! eigenproblems, Cholesky for definiteness tests, Padé scaling-and-squaring
//! for the matrix exponential and Francis QR for general eigenvalues.

mod general;
mod matrix;
mod sym;

pub use general::{
    discrete_lyapunov, eigenvalues, inverse, mat_exp, rank, solve, spectral_radius, Lu,
};
pub use matrix::Matrix;
pub use sym::{
    cholesky, cholesky_psd, inverse_spd, log_det_spd, max_eigenvalue, max_generalized_eigenvalue,
    min_eigenvalue, solve_lower, solve_lower_transpose, solve_spd, sym_eig, sym_sqrt, PsdTest,
    SymEig, SymMatrix,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite matrix entry")]
    NonFinite,
    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("value out of range: {0}")]
    Range(String),
    #[error("unstable matrix (spectral radius {0})")]
    Unstable(f64),
    #[error("iteration did not converge: {0}")]
    NoConvergence(String),
    #[error("invalid input: {0}")]
    Input(String),
}

/// Absolute-plus-relative slack `abs + rel * scale`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            abs: 1e-9,
            rel: 1e-9,
        }
    }
}

impl Tolerance {
    pub fn new(abs: f64, rel: f64) -> Self {
        Self { abs, rel }
    }

    pub fn slack(&self, scale: f64) -> f64 {
        self.abs + self.rel * scale
    }
}
