//! Invariant ellipsoids for `x⁺ = Â x + B̂ û` with a bounded input `û`.
//!
//! The set `{x | xᵀPx <= 1}` is invariant when, for some `0 < α < 1`,
//!
//! ```text
//! [ÂᵀPÂ - (1-α)P   ÂᵀPB̂      ]
//! [B̂ᵀPÂ            B̂ᵀPB̂ - αP1] ≺ 0.
//! ```
//!
//! By a Schur complement this is `Q ≻ ÂQÂᵀ/(1-α) + B̂Q1B̂ᵀ/α` with `Q = P⁻¹`
//! and `Q1 = P1⁻¹`, so for fixed `α` the Stein equation
//! `Q = ÃQÃᵀ + B̂Q1B̂ᵀ/α + εI`, `Ã = Â/√(1-α)`, yields a candidate for every
//! `ε >= 0`. Every candidate is accepted only after the eigenvalue check of
//! the block matrix clears the margin.

use super::SynthesisError;
use crate::numerics::{
    cholesky_psd, discrete_lyapunov, inverse_spd, log_det_spd, max_eigenvalue, spectral_radius,
    sym_eig, sym_sqrt, Matrix, NumericsError, SymMatrix,
};

/// Multiplier grid: a fine head for nearly marginal loops, then `k/50`.
pub fn alpha_grid() -> Vec<f64> {
    let mut g = vec![0.001, 0.002, 0.003, 0.005, 0.0075, 0.01, 0.014];
    g.extend((1..50).map(|k| k as f64 / 50.0));
    g
}

/// Bound on the driving input `û`.
#[derive(Clone, Debug)]
pub enum InputBound {
    /// `ûᵀ P1 û <= 1`, `P1 ≻ 0`.
    P(SymMatrix),
    /// `û ∈ {Q1^{1/2} w | ‖w‖ <= 1}`; `Q1` may be singular.
    Q(SymMatrix),
}

#[derive(Clone, Debug)]
pub struct SynthOptions {
    /// Required `-λ_max` of the certificate LMI. Negative values accept
    /// slightly positive eigenvalues (a tolerance on boundary cases).
    pub margin: f64,
    pub alphas: Vec<f64>,
    pub max_projection_iters: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            margin: 1e-8,
            alphas: alpha_grid(),
            max_projection_iters: 10_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Invariant {
    pub p: SymMatrix,
    pub alpha: f64,
    /// `λ_max` of the verifying LMI.
    pub lmi_max_eig: f64,
}

/// The invariance block matrix for `(P, α)`.
pub fn invariance_lmi(
    a_hat: &Matrix,
    b_hat: &Matrix,
    p: &SymMatrix,
    p1: &SymMatrix,
    alpha: f64,
) -> Result<SymMatrix, NumericsError> {
    let n = a_hat.rows();
    let m = b_hat.cols();
    if p.dim() != n || p1.dim() != m || b_hat.rows() != n {
        return Err(NumericsError::Dimension(
            "invariance LMI operands disagree".into(),
        ));
    }
    let pa = p.matmul(a_hat)?;
    let pb = p.matmul(b_hat)?;
    let at = a_hat.transpose();
    let bt = b_hat.transpose();
    let mut blk = Matrix::zeros(n + m, n + m);
    blk.set_block(0, 0, &(&(&at * &pa) - &p.scale(1.0 - alpha)));
    let apb = &at * &pb;
    blk.set_block(0, n, &apb);
    blk.set_block(n, 0, &apb.transpose());
    blk.set_block(n, n, &(&(&bt * &pb) - &p1.scale(alpha)));
    Ok(SymMatrix::from_symmetric_part(&blk))
}

/// Whether `λ_max` of `lmi` clears the margin by more than a backward-stable
/// eigensolver could misplace it: `dim · ε · ‖M‖_F`.
fn clears(lmi: &SymMatrix, eig: f64, margin: f64) -> bool {
    let rounding = lmi.dim() as f64 * f64::EPSILON * lmi.as_matrix().frobenius_norm();
    eig + rounding <= -margin
}

struct Prepared {
    /// Input matrix after folding the input shape in.
    b: Matrix,
    /// Shape the verification LMI uses for the input.
    p1: SymMatrix,
    /// `B̂ Q1 B̂ᵀ`.
    drive: SymMatrix,
}

fn prepare(a_hat: &Matrix, b_hat: &Matrix, bound: &InputBound) -> Result<Prepared, SynthesisError> {
    let n = a_hat.rows();
    if !a_hat.is_square() || b_hat.rows() != n {
        return Err(SynthesisError::Input(
            "Â must be square with as many rows as B̂".into(),
        ));
    }
    match bound {
        InputBound::P(p1) => {
            if p1.dim() != b_hat.cols() {
                return Err(SynthesisError::Input(
                    "input bound has the wrong dimension".into(),
                ));
            }
            let q1 = inverse_spd(p1)
                .map_err(|_| SynthesisError::Input("P1 is not positive definite".into()))?;
            Ok(Prepared {
                b: b_hat.clone(),
                p1: p1.clone(),
                drive: q1.congruence(b_hat)?,
            })
        }
        InputBound::Q(q1) => {
            if q1.dim() != b_hat.cols() {
                return Err(SynthesisError::Input(
                    "input bound has the wrong dimension".into(),
                ));
            }
            let root = sym_sqrt(q1, 1e-12 * (1.0 + q1.max_abs()))?;
            let b = b_hat * root.as_matrix();
            Ok(Prepared {
                p1: SymMatrix::identity(b.cols()),
                drive: SymMatrix::from_symmetric_part(&(&b * &b.transpose())),
                b,
            })
        }
    }
}

fn candidate(
    a_hat: &Matrix,
    drive: &SymMatrix,
    alpha: f64,
    delta: f64,
    eps: f64,
) -> Result<SymMatrix, NumericsError> {
    let at = a_hat.scale(1.0 / ((1.0 - alpha) * (1.0 - delta)).sqrt());
    let w = drive.scale(1.0 / alpha).shift(eps);
    discrete_lyapunov(&at, &w)
}

/// Finds `(P, α)` certifying invariance of `{x | xᵀPx <= 1}`.
///
/// Candidates solve `Q = ÃQÃᵀ/(1-δ) + B̂Q1B̂ᵀ/α + εI`; `δ` buys a gap
/// proportional to the shape of `Q` and `ε` one in every direction. Values of
/// `α` are tried in order of increasing volume, and for each the smallest
/// perturbation that clears the margin wins. The margin must hold with room
/// for the rounding error of the eigenvalue check itself.
pub fn synth_invariant(
    a_hat: &Matrix,
    b_hat: &Matrix,
    bound: &InputBound,
    opts: &SynthOptions,
) -> Result<Invariant, SynthesisError> {
    let rho = spectral_radius(a_hat)?;
    if !(rho < 1.0) {
        return Err(SynthesisError::Unstable(rho));
    }
    let prep = prepare(a_hat, b_hat, bound)?;
    let n = a_hat.rows();
    // a tiny regularization keeps the volume comparison finite when the
    // drive does not excite every direction
    let scale = 1.0 + prep.drive.max_abs();
    let reg = 1e-12 * scale;
    let mut ranked: Vec<(f64, f64)> = Vec::new();
    for &alpha in &opts.alphas {
        if !(alpha > 0.0 && alpha < 1.0) || rho * rho >= 1.0 - alpha {
            continue;
        }
        let Ok(q) = candidate(a_hat, &prep.drive, alpha, 0.0, reg) else {
            continue;
        };
        if let Ok(ld) = log_det_spd(&q) {
            ranked.push((ld, alpha));
        }
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
    if ranked.is_empty() {
        return Err(SynthesisError::Infeasible {
            best_lmi_max_eig: f64::INFINITY,
        });
    }
    let deltas = [0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 3e-2, 0.1];
    let epsilons: Vec<f64> = std::iter::once(0.0)
        .chain((0..14).map(|k| 10f64.powi(k - 14) * scale))
        .collect();
    let mut best_eig = f64::INFINITY;
    for &(_, alpha) in ranked.iter().take(8) {
        for &delta in &deltas {
            if rho * rho >= (1.0 - alpha) * (1.0 - delta) {
                continue;
            }
            for &eps in &epsilons {
                let Ok(q) = candidate(a_hat, &prep.drive, alpha, delta, eps) else {
                    continue;
                };
                let Ok(p) = inverse_spd(&q) else { continue };
                let lmi = invariance_lmi(a_hat, &prep.b, &p, &prep.p1, alpha)?;
                let eig = max_eigenvalue(&lmi)?;
                best_eig = best_eig.min(eig);
                if clears(&lmi, eig, opts.margin) {
                    log::debug!(
                        "invariant found: alpha {alpha}, delta {delta:e}, eps {eps:e}, lambda_max {eig:e}"
                    );
                    return Ok(Invariant {
                        p,
                        alpha,
                        lmi_max_eig: eig,
                    });
                }
            }
        }
    }
    let alpha = ranked[0].1;
    log::debug!("Stein candidates failed (best {best_eig:e}); trying alternating projections");
    let start = candidate(a_hat, &prep.drive, alpha, 0.0, reg)
        .ok()
        .and_then(|q| inverse_spd(&q).ok())
        .unwrap_or_else(|| SymMatrix::identity(n));
    match alternating_projections(
        a_hat,
        &prep.b,
        &prep.p1,
        alpha,
        &start,
        opts.margin,
        opts.max_projection_iters,
    ) {
        Ok(inv) => Ok(inv),
        Err(SynthesisError::Infeasible { best_lmi_max_eig }) => Err(SynthesisError::Infeasible {
            best_lmi_max_eig: best_lmi_max_eig.min(best_eig),
        }),
        Err(e) => Err(e),
    }
}

/// Entry point with an input bound `ûᵀ P1 û <= 1`.
pub fn synth_invariant_bounded_input(
    a_hat: &Matrix,
    b_hat: &Matrix,
    p1: &SymMatrix,
) -> Result<Invariant, SynthesisError> {
    synth_invariant(
        a_hat,
        b_hat,
        &InputBound::P(p1.clone()),
        &SynthOptions::default(),
    )
}

/// Alternating projections between the negative semidefinite cone and the
/// affine image of the LMI map, for a fixed `α`. `P` is kept above a small
/// multiple of the identity after every step.
pub fn alternating_projections(
    a_hat: &Matrix,
    b_hat: &Matrix,
    p1: &SymMatrix,
    alpha: f64,
    start: &SymMatrix,
    margin: f64,
    max_iters: usize,
) -> Result<Invariant, SynthesisError> {
    let n = a_hat.rows();
    let m = b_hat.cols();
    let dim = n + m;
    let basis: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let zero_p = SymMatrix::from_symmetric_part(&Matrix::zeros(n, n));
    let offset = invariance_lmi(a_hat, b_hat, &zero_p, p1, alpha)?;
    // columns: LMI map applied to each basis matrix, minus the constant part
    let mut g = Matrix::zeros(dim * dim, basis.len());
    for (k, &(i, j)) in basis.iter().enumerate() {
        let mut e = Matrix::zeros(n, n);
        e[(i, j)] = 1.0;
        e[(j, i)] = 1.0;
        let img = invariance_lmi(a_hat, b_hat, &SymMatrix::from_symmetric_part(&e), p1, alpha)?;
        let d = img.as_matrix() - offset.as_matrix();
        for (r, v) in d.data().iter().enumerate() {
            g[(r, k)] = *v;
        }
    }
    let gt = g.transpose();
    let normal = SymMatrix::from_symmetric_part(&(&gt * &g));
    let floor = 1e-9 * (1.0 + start.max_abs());
    let mut p = start.clone();
    let mut best = f64::INFINITY;
    for it in 0..max_iters {
        let lmi = invariance_lmi(a_hat, b_hat, &p, p1, alpha)?;
        let eig = sym_eig(&lmi)?;
        best = best.min(eig.max());
        if clears(&lmi, eig.max(), margin) && cholesky_psd(&p.shift(-floor), 0.0)?.psd {
            log::debug!("alternating projections converged after {it} iterations");
            return Ok(Invariant {
                p,
                alpha,
                lmi_max_eig: eig.max(),
            });
        }
        // nearest point of the shifted cone {M ⪯ -2 margin I}
        let target_shift = 2.0 * margin.max(0.0) + 1e-12;
        let clipped: Vec<f64> = eig.values.iter().map(|v| v.min(-target_shift)).collect();
        let target = eig.vectors.congruence(&Matrix::from_diag(&clipped))?;
        let rhs_m = &target - offset.as_matrix();
        let rhs = gt.mul_vec(rhs_m.data())?;
        let coef = crate::numerics::solve_spd(&normal, &Matrix::column(&rhs))
            .or_else(|_| crate::numerics::solve(normal.as_matrix(), &Matrix::column(&rhs)))?;
        let mut next = Matrix::zeros(n, n);
        for (k, &(i, j)) in basis.iter().enumerate() {
            next[(i, j)] = coef[(k, 0)];
            next[(j, i)] = coef[(k, 0)];
        }
        let pe = sym_eig(&SymMatrix::from_symmetric_part(&next))?;
        let lifted: Vec<f64> = pe.values.iter().map(|v| v.max(2.0 * floor)).collect();
        p = SymMatrix::from_symmetric_part(&pe.vectors.congruence(&Matrix::from_diag(&lifted))?);
    }
    Err(SynthesisError::Infeasible {
        best_lmi_max_eig: best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: f64) -> Matrix {
        Matrix::from_diag(&[v])
    }

    #[test]
    fn scalar_loop_boundary_case() {
        let opts = SynthOptions {
            margin: -1e-6,
            ..SynthOptions::default()
        };
        let inv = synth_invariant(
            &s(0.98),
            &s(0.02),
            &InputBound::P(SymMatrix::identity(1)),
            &opts,
        )
        .unwrap();
        assert!((inv.p[(0, 0)] - 1.0).abs() < 1e-9, "{:?}", inv.p);
        assert!(inv.alpha > 0.0 && inv.alpha < 0.04);
        assert!(inv.lmi_max_eig <= 1e-6);
    }

    #[test]
    fn scalar_loop_is_not_strictly_feasible_at_unit_level() {
        // x² <= 1 is the exact reachable bound, so the strict margin forces a
        // slightly larger ellipsoid (P < 1).
        let inv =
            synth_invariant_bounded_input(&s(0.98), &s(0.02), &SymMatrix::identity(1)).unwrap();
        assert!(inv.p[(0, 0)] < 1.0 && inv.p[(0, 0)] > 0.99);
        assert!(inv.lmi_max_eig <= -1e-8);
    }

    #[test]
    fn disturbance_free_case() {
        let a = Matrix::from_rows(&[vec![0.5, 0.2], vec![0.0, 0.7]]).unwrap();
        let b = Matrix::zeros(2, 1);
        let inv = synth_invariant_bounded_input(&a, &b, &SymMatrix::identity(1)).unwrap();
        let lmi = invariance_lmi(&a, &b, &inv.p, &SymMatrix::identity(1), inv.alpha).unwrap();
        assert!(max_eigenvalue(&lmi).unwrap() < -1e-8);
    }

    #[test]
    fn unstable_dynamics_rejected() {
        let err =
            synth_invariant_bounded_input(&s(1.01), &s(1.0), &SymMatrix::identity(1)).unwrap_err();
        assert!(matches!(err, SynthesisError::Unstable(r) if (r - 1.01).abs() < 1e-12));
    }

    #[test]
    fn degenerate_input_shape() {
        let a = Matrix::from_rows(&[vec![0.6, 0.1], vec![-0.1, 0.6]]).unwrap();
        let b = Matrix::identity(2);
        let q1 = SymMatrix::from_diag(&[1.0, 0.0]);
        let inv = synth_invariant(&a, &b, &InputBound::Q(q1), &SynthOptions::default()).unwrap();
        assert!(inv.lmi_max_eig < -1e-8);
    }

    #[test]
    fn projections_find_a_certificate() {
        let a = Matrix::from_rows(&[vec![0.5, 0.3], vec![-0.2, 0.4]]).unwrap();
        let b = Matrix::from_rows(&[vec![0.1], vec![0.2]]).unwrap();
        let p1 = SymMatrix::identity(1);
        let inv = alternating_projections(&a, &b, &p1, 0.3, &SymMatrix::identity(2), 1e-8, 10_000)
            .unwrap();
        let lmi = invariance_lmi(&a, &b, &inv.p, &p1, 0.3).unwrap();
        assert!(max_eigenvalue(&lmi).unwrap() <= -1e-8);
        assert!(cholesky_psd(&inv.p, 0.0).unwrap().psd);
    }
}
