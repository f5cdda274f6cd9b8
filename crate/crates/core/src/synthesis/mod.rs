//! Certificate synthesis: closed-loop and observer invariants, error-state
//! ellipsoids, the faulty level set, the residual threshold, and a checker
//! for the continuous-time bounded-disturbance LMI.

mod bundle;
mod lmi;

pub use bundle::{
    synthesize, synthesize_loop, Bundle, CertificateBundle, DetectorCertificate, LoopBundle,
    ModeCertificates,
};
pub use lmi::{
    alpha_grid, alternating_projections, invariance_lmi, synth_invariant,
    synth_invariant_bounded_input, InputBound, Invariant, SynthOptions,
};

use thiserror::Error;

use crate::ellipsoid::EllipsoidError;
use crate::model::ModelError;
use crate::numerics::{
    inverse_spd, max_eigenvalue, min_eigenvalue, spectral_radius, sym_sqrt, Matrix, NumericsError,
    SymMatrix,
};

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("dynamics are not stable (spectral radius {0:.6})")]
    Unstable(f64),
    #[error("no feasible invariant found (best LMI max eigenvalue {best_lmi_max_eig:e})")]
    Infeasible { best_lmi_max_eig: f64 },
    #[error("level-set bisection failed: {0}")]
    LevelSet(String),
    #[error("invalid certificate: {0}")]
    Certificate(String),
    #[error("invalid synthesis input: {0}")]
    Input(String),
    #[error("inconsistent certificate bundle: {0}")]
    Bundle(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ellipsoid(#[from] EllipsoidError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// One-step S-procedure matrix for `e⁺ = Â e + E f`, `‖f‖ <= σ`, at the
/// normalized level `κ = c / σ²`.
fn level_set_matrix(
    a_hat: &Matrix,
    e: &Matrix,
    p: &SymMatrix,
    alpha: f64,
    kappa: f64,
) -> Result<SymMatrix, NumericsError> {
    let w = SymMatrix::identity(e.cols()).scale(kappa);
    invariance_lmi(a_hat, e, p, &w, alpha)
}

fn level_feasible(
    a_hat: &Matrix,
    e: &Matrix,
    p: &SymMatrix,
    alphas: &[f64],
    kappa: f64,
) -> Result<bool, NumericsError> {
    for &alpha in alphas {
        let m = level_set_matrix(a_hat, e, p, alpha, kappa)?;
        let slack = 1e-13 * (1.0 + m.max_abs());
        if max_eigenvalue(&m)? <= slack {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Smallest `c` (to relative width `1e-4`, rounded up) for which
/// `{e | eᵀPe <= c}` is invariant under `e⁺ = Â e + E f` with `‖f‖ <= σ`.
///
/// The search runs on `κ = c/σ²`, which does not depend on `σ`, so the
/// result scales exactly with `σ²`.
pub fn faulty_level_set(
    a_hat: &Matrix,
    e: &Matrix,
    p: &SymMatrix,
    sigma: f64,
) -> Result<f64, SynthesisError> {
    if !(sigma > 0.0) {
        return Err(SynthesisError::Input(format!(
            "sigma = {sigma} must be positive"
        )));
    }
    let rho = spectral_radius(a_hat)?;
    if !(rho < 1.0) {
        return Err(SynthesisError::Unstable(rho));
    }
    if min_eigenvalue(p)? <= 0.0 {
        return Err(SynthesisError::Input("P must be positive definite".into()));
    }
    let alphas = alpha_grid();
    let mut hi = 1e6;
    if !level_feasible(a_hat, e, p, &alphas, hi)? {
        return Err(SynthesisError::LevelSet(format!(
            "no invariant level set up to c/σ² = {hi:e}"
        )));
    }
    let mut lo = hi;
    loop {
        lo *= 0.5;
        if lo < 1e-30 {
            return Ok(0.0);
        }
        if level_feasible(a_hat, e, p, &alphas, lo)? {
            hi = lo;
        } else {
            break;
        }
    }
    while hi - lo > 1e-4 * hi {
        let mid = 0.5 * (lo + hi);
        if level_feasible(a_hat, e, p, &alphas, mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi * (sigma * sigma))
}

/// Certificate of the continuous-time bounded-disturbance lemma.
#[derive(Clone, Debug)]
pub struct DisturbanceCertificate {
    pub q: SymMatrix,
    pub rho: f64,
    pub p: SymMatrix,
}

/// The block matrix
/// `[[AᵀQ + QA, QE, P^{1/2}], [EᵀQ, -ρI, 0], [P^{1/2}, 0, -ρI]]`.
pub fn disturbance_lmi(
    a: &Matrix,
    e: &Matrix,
    cert: &DisturbanceCertificate,
) -> Result<SymMatrix, SynthesisError> {
    let n = a.rows();
    let k = e.cols();
    if !a.is_square() || e.rows() != n || cert.q.dim() != n || cert.p.dim() != n {
        return Err(SynthesisError::Input(
            "disturbance LMI operands have inconsistent dimensions".into(),
        ));
    }
    let root = sym_sqrt(&cert.p, 0.0)
        .map_err(|_| SynthesisError::Certificate("P is not positive semidefinite".into()))?;
    let aq = &a.transpose() * cert.q.as_matrix();
    let qe = cert.q.as_matrix() * e;
    let mut blk = Matrix::zeros(2 * n + k, 2 * n + k);
    blk.set_block(0, 0, &(&aq + &aq.transpose()));
    blk.set_block(0, n, &qe);
    blk.set_block(n, 0, &qe.transpose());
    blk.set_block(0, n + k, root.as_matrix());
    blk.set_block(n + k, 0, root.as_matrix());
    blk.set_block(n, n, &Matrix::identity(k).scale(-cert.rho));
    blk.set_block(n + k, n + k, &Matrix::identity(n).scale(-cert.rho));
    Ok(SymMatrix::from_symmetric_part(&blk))
}

/// True iff `λ_max(block) < -tol` and `Q ≻ 0`.
pub fn check_disturbance_lmi(
    a: &Matrix,
    e: &Matrix,
    cert: &DisturbanceCertificate,
    tol: f64,
) -> Result<bool, SynthesisError> {
    if !(cert.rho > 0.0) {
        return Err(SynthesisError::Certificate(format!(
            "rho = {} must be positive",
            cert.rho
        )));
    }
    let qmin = min_eigenvalue(&cert.q)?;
    if qmin < 0.0 {
        return Err(SynthesisError::Certificate(format!(
            "Q has a negative eigenvalue ({qmin:e})"
        )));
    }
    let block = disturbance_lmi(a, e, cert)?;
    Ok(qmin > 0.0 && max_eigenvalue(&block)? < -tol)
}

/// `sqrt(ζ λ_max(C P⁻¹ Cᵀ))`: the largest `‖Ce‖` over `{e | eᵀPe <= ζ}`.
pub fn residual_threshold(p: &SymMatrix, zeta: f64, c: &Matrix) -> Result<f64, SynthesisError> {
    if !(zeta >= 0.0) {
        return Err(SynthesisError::Input(format!(
            "level {zeta} must be nonnegative"
        )));
    }
    let q = inverse_spd(p)?;
    let out = q.congruence(c)?;
    Ok((zeta * max_eigenvalue(&out)?.max(0.0)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_level_set_is_geometric_series_bound() {
        let z = faulty_level_set(
            &Matrix::from_diag(&[0.5]),
            &Matrix::from_diag(&[1.0]),
            &SymMatrix::identity(1),
            1.0,
        )
        .unwrap();
        assert!(
            (4.0 * (1.0 - 1e-10)..=4.0 * (1.0 + 2e-4)).contains(&z),
            "{z}"
        );
    }

    #[test]
    fn level_set_without_fault_input_vanishes() {
        let z = faulty_level_set(
            &Matrix::from_diag(&[0.5, 0.3]),
            &Matrix::zeros(2, 1),
            &SymMatrix::identity(2),
            1.0,
        )
        .unwrap();
        assert!(z < 1e-100, "{z}");
    }

    #[test]
    fn level_set_scales_with_sigma_squared() {
        let a = Matrix::from_rows(&[vec![0.6, 0.2], vec![-0.1, 0.7]]).unwrap();
        let e = Matrix::from_rows(&[vec![1.0], vec![0.5]]).unwrap();
        let p = SymMatrix::identity(2);
        let z1 = faulty_level_set(&a, &e, &p, 1.0).unwrap();
        let z3 = faulty_level_set(&a, &e, &p, 3.0).unwrap();
        assert_eq!(z3, 9.0 * z1);
    }

    fn cert(rho: f64) -> DisturbanceCertificate {
        DisturbanceCertificate {
            q: SymMatrix::identity(1),
            rho,
            p: SymMatrix::identity(1),
        }
    }

    #[test]
    fn disturbance_lmi_examples() {
        let a = Matrix::from_diag(&[-1.0]);
        let e = Matrix::zeros(1, 1);
        assert!(check_disturbance_lmi(&a, &e, &cert(2.0), 0.0).unwrap());
        assert!(!check_disturbance_lmi(&a, &e, &cert(0.1), 0.0).unwrap());
        let bad = DisturbanceCertificate {
            q: SymMatrix::from_diag(&[-1.0]),
            ..cert(2.0)
        };
        assert!(matches!(
            check_disturbance_lmi(&a, &e, &bad, 0.0),
            Err(SynthesisError::Certificate(_))
        ));
    }

    #[test]
    fn disturbance_lmi_eigenvalues() {
        // block for ρ = 0.1 is [[-2, 0, 1], [0, -0.1, 0], [1, 0, -0.1]]
        let blk = disturbance_lmi(
            &Matrix::from_diag(&[-1.0]),
            &Matrix::zeros(1, 1),
            &cert(0.1),
        )
        .unwrap();
        let (tr, det): (f64, f64) = (-2.1, 0.2 - 1.0);
        let top = 0.5 * (tr + (tr * tr - 4.0 * det).sqrt());
        assert!((max_eigenvalue(&blk).unwrap() - top).abs() < 1e-12);
    }

    #[test]
    fn threshold_examples() {
        let r = residual_threshold(&SymMatrix::identity(2), 1.0, &Matrix::identity(2)).unwrap();
        assert!((r - 1.0).abs() < 1e-15);
        let c = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let r = residual_threshold(&SymMatrix::from_diag(&[4.0, 1.0]), 1.0, &c).unwrap();
        assert!((r - 0.5).abs() < 1e-15);
    }
}
