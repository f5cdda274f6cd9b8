//! Origin-centered ellipsoids over named variables and the calculus used to
//! push them through straight-line code.
//!
//! Two representations coexist:
//!
//! * [`EllipsoidP`]: `{x | x^T P x <= level}` with `P` positive definite.
//! * [`EllipsoidQ`]: the shape form with `Q = level * P^{-1}`. `Q` may be
//!   singular; membership is `[[1, x^T], [x, Q]] ⪰ 0`, i.e. `x` lies in the
//!   range of `Q` and `x^T Q^+ x <= 1`. Exact images of linear maps onto
//!   stacked vectors are degenerate, which is why the Q form is the one the
//!   propagation works in.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{
    cholesky_psd, inverse_spd, min_eigenvalue, Matrix, NumericsError, SymMatrix,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EllipsoidError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("shape matrix is singular; no P form exists")]
    Degenerate,
    #[error("invalid S-procedure certificate: {0}")]
    Certificate(String),
    #[error("invalid ellipsoid: {0}")]
    Invalid(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// `{x | x^T P x <= level}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidP {
    #[serde(rename = "P")]
    pub p: SymMatrix,
    pub vars: Vec<String>,
    pub level: f64,
}

impl EllipsoidP {
    pub fn new(p: SymMatrix, vars: Vec<String>, level: f64) -> Result<Self, EllipsoidError> {
        if p.dim() != vars.len() {
            return Err(EllipsoidError::Dimension(format!(
                "{} variables for a {}x{} shape",
                vars.len(),
                p.dim(),
                p.dim()
            )));
        }
        if !(level > 0.0) || !level.is_finite() {
            return Err(EllipsoidError::Invalid(format!(
                "level {level} must be positive"
            )));
        }
        Ok(Self { p, vars, level })
    }

    pub fn unit(p: SymMatrix, vars: Vec<String>) -> Result<Self, EllipsoidError> {
        Self::new(p, vars, 1.0)
    }

    pub fn dim(&self) -> usize {
        self.vars.len()
    }

    /// `x^T P x`.
    pub fn value(&self, x: &[f64]) -> Result<f64, EllipsoidError> {
        Ok(self.p.quad_form(x)?)
    }

    pub fn contains(&self, x: &[f64]) -> Result<bool, EllipsoidError> {
        Ok(self.value(x)? <= self.level)
    }

    /// Same set with the level folded into the shape (`level = 1`).
    pub fn normalized(&self) -> EllipsoidP {
        Self {
            p: self.p.scale(1.0 / self.level),
            vars: self.vars.clone(),
            level: 1.0,
        }
    }

    pub fn with_level(&self, level: f64) -> Result<EllipsoidP, EllipsoidError> {
        Self::new(self.p.clone(), self.vars.clone(), level)
    }
}

/// `{x | [[1, x^T], [x, Q]] ⪰ 0}`.
#[derive(Clone, Debug, PartialEq)]
pub struct EllipsoidQ {
    pub q: SymMatrix,
    pub vars: Vec<String>,
}

impl EllipsoidQ {
    pub fn new(q: SymMatrix, vars: Vec<String>) -> Result<Self, EllipsoidError> {
        if q.dim() != vars.len() {
            return Err(EllipsoidError::Dimension(format!(
                "{} variables for a {}x{} shape",
                vars.len(),
                q.dim(),
                q.dim()
            )));
        }
        Ok(Self { q, vars })
    }

    pub fn dim(&self) -> usize {
        self.vars.len()
    }

    fn index_of(&self, var: &str) -> Result<usize, EllipsoidError> {
        self.vars
            .iter()
            .position(|v| v == var)
            .ok_or_else(|| EllipsoidError::UnknownVariable(var.to_string()))
    }
}

/// Multipliers of the error-state S-procedure: the state ellipsoid is
/// weighted by `gamma`, the observer ellipsoid by `1 - alpha - gamma`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SProcCertificate {
    pub alpha: f64,
    pub gamma: f64,
}

impl SProcCertificate {
    pub fn new(alpha: f64, gamma: f64) -> Result<Self, EllipsoidError> {
        let c = Self { alpha, gamma };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), EllipsoidError> {
        if !(self.alpha > 0.0) {
            return Err(EllipsoidError::Certificate(format!(
                "alpha = {} must be positive",
                self.alpha
            )));
        }
        if !(self.gamma > 0.0) {
            return Err(EllipsoidError::Certificate(format!(
                "gamma = {} must be positive",
                self.gamma
            )));
        }
        if !(self.alpha + self.gamma < 1.0) {
            return Err(EllipsoidError::Certificate(format!(
                "alpha + gamma = {} must be below 1",
                self.alpha + self.gamma
            )));
        }
        Ok(())
    }

    /// Weights `(gamma, 1 - alpha - gamma)` on the two combined ellipsoids.
    pub fn weights(&self) -> (f64, f64) {
        (self.gamma, 1.0 - self.alpha - self.gamma)
    }
}

/// `Q = level * P^{-1}`.
pub fn p_to_q(e: &EllipsoidP) -> Result<EllipsoidQ, EllipsoidError> {
    let q = inverse_spd(&e.p)?.scale(e.level);
    EllipsoidQ::new(q, e.vars.clone())
}

/// `P = Q^{-1}` at level 1. Singular shapes have no P form.
pub fn q_to_p(e: &EllipsoidQ) -> Result<EllipsoidP, EllipsoidError> {
    let p = inverse_spd(&e.q).map_err(|err| match err {
        NumericsError::Singular(_) => EllipsoidError::Degenerate,
        other => other.into(),
    })?;
    EllipsoidP::unit(p, e.vars.clone())
}

/// Exact image under the linear map `T`: `Q' = T Q T^T`.
pub fn affine_image(
    e: &EllipsoidQ,
    t: &Matrix,
    out_vars: Vec<String>,
) -> Result<EllipsoidQ, EllipsoidError> {
    if t.cols() != e.dim() || t.rows() != out_vars.len() {
        return Err(EllipsoidError::Dimension(format!(
            "map is {}x{}, ellipsoid has {} variables and {} outputs were named",
            t.rows(),
            t.cols(),
            e.dim(),
            out_vars.len()
        )));
    }
    EllipsoidQ::new(e.q.congruence(t)?, out_vars)
}

/// Shadow of the ellipsoid on a subset of its variables.
pub fn project(e: &EllipsoidQ, keep_vars: &[&str]) -> Result<EllipsoidQ, EllipsoidError> {
    let idx = keep_vars
        .iter()
        .map(|v| e.index_of(v))
        .collect::<Result<Vec<_>, _>>()?;
    let mut sel = Matrix::zeros(idx.len(), e.dim());
    for (r, &c) in idx.iter().enumerate() {
        sel[(r, c)] = 1.0;
    }
    affine_image(e, &sel, keep_vars.iter().map(|s| s.to_string()).collect())
}

/// S-procedure relaxation of a conjunction: if each `x_i` lies in its own
/// ellipsoid and the weights sum to at most one, the stacked vector lies in
/// `{x | sum_i w_i x_i^T P_i x_i <= 1}`, whose shape is
/// `blockdiag(Q_i / w_i)`.
pub fn weighted_stack(parts: &[(&EllipsoidQ, f64)]) -> Result<EllipsoidQ, EllipsoidError> {
    let total: f64 = parts.iter().map(|(_, w)| w).sum();
    if parts.iter().any(|(_, w)| !(*w > 0.0)) || total > 1.0 + 1e-15 {
        return Err(EllipsoidError::Certificate(format!(
            "weights must be positive with sum <= 1 (sum {total})"
        )));
    }
    let scaled: Vec<SymMatrix> = parts.iter().map(|(e, w)| e.q.scale(1.0 / w)).collect();
    let refs: Vec<&SymMatrix> = scaled.iter().collect();
    let vars = parts
        .iter()
        .flat_map(|(e, _)| e.vars.iter().cloned())
        .collect();
    EllipsoidQ::new(SymMatrix::block_diag(&refs), vars)
}

/// Error-state ellipsoid from a state ellipsoid and an observer ellipsoid of
/// equal dimension: `P_e = (T P_{x,x̂}^{-1} T^T)^{-1}` with `T = [I -I]` and
/// `P_{x,x̂} = blockdiag(gamma P_x, (1 - alpha - gamma) P_x̂)`.
pub fn sproc_combine(
    state: &EllipsoidP,
    observer: &EllipsoidP,
    cert: &SProcCertificate,
    out_vars: Vec<String>,
) -> Result<EllipsoidP, EllipsoidError> {
    cert.validate()?;
    let n = state.dim();
    if observer.dim() != n || out_vars.len() != n {
        return Err(EllipsoidError::Dimension(format!(
            "state has {n} variables, observer {}, output {}",
            observer.dim(),
            out_vars.len()
        )));
    }
    let (w_state, w_obs) = cert.weights();
    let qs = p_to_q(state)?;
    let qo = p_to_q(observer)?;
    let stacked = weighted_stack(&[(&qs, w_state), (&qo, w_obs)])?;
    let t = Matrix::hstack(&[&Matrix::identity(n), &Matrix::identity(n).scale(-1.0)])?;
    q_to_p(&affine_image(&stacked, &t, out_vars)?)
}

/// Bordered-matrix membership test; tolerates singular `Q`.
pub fn contains(e: &EllipsoidQ, x: &[f64], tol: f64) -> Result<bool, EllipsoidError> {
    let n = e.dim();
    if x.len() != n {
        return Err(EllipsoidError::Dimension(format!(
            "point of length {} for {n} variables",
            x.len()
        )));
    }
    let mut b = Matrix::zeros(n + 1, n + 1);
    b[(0, 0)] = 1.0;
    for i in 0..n {
        b[(0, i + 1)] = x[i];
        b[(i + 1, 0)] = x[i];
    }
    b.set_block(1, 1, e.q.as_matrix());
    Ok(cholesky_psd(&SymMatrix::from_symmetric_part(&b), tol)?.psd)
}

/// Sufficient inclusion test `Q2 - Q1 ⪰ -tol I`.
pub fn inclusion(e1: &EllipsoidQ, e2: &EllipsoidQ, tol: f64) -> Result<bool, EllipsoidError> {
    Ok(inclusion_margin(e1, e2)? >= -tol)
}

/// `λ_min(Q2 - Q1)`; nonnegative iff the sufficient inclusion test passes.
pub fn inclusion_margin(e1: &EllipsoidQ, e2: &EllipsoidQ) -> Result<f64, EllipsoidError> {
    if e1.vars != e2.vars {
        return Err(EllipsoidError::Dimension(format!(
            "variable lists differ: {:?} vs {:?}",
            e1.vars, e2.vars
        )));
    }
    Ok(min_eigenvalue(&e2.q.sub(&e1.q))?)
}

pub fn var_names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}[{i}]")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(rows: &[Vec<f64>], vars: &[&str]) -> EllipsoidQ {
        EllipsoidQ::new(
            SymMatrix::new(Matrix::from_rows(rows).unwrap()).unwrap(),
            vars.iter().map(|s| s.to_string()).collect(),
        )
        .unwrap()
    }

    fn names(n: usize) -> Vec<String> {
        var_names("x", n)
    }

    #[test]
    fn p_q_examples() {
        let e = EllipsoidP::unit(SymMatrix::identity(2), names(2)).unwrap();
        assert_eq!(p_to_q(&e).unwrap().q, SymMatrix::identity(2));
        let e = EllipsoidP::unit(SymMatrix::from_diag(&[4.0]), names(1)).unwrap();
        assert_eq!(p_to_q(&e).unwrap().q, SymMatrix::from_diag(&[0.25]));
        let e = EllipsoidP::new(SymMatrix::identity(2), names(2), 2.0).unwrap();
        assert_eq!(p_to_q(&e).unwrap().q, SymMatrix::identity(2).scale(2.0));
    }

    #[test]
    fn q_to_p_rejects_singular() {
        let e = q(&[vec![1.0, 1.0], vec![1.0, 1.0]], &["a", "b"]);
        assert_eq!(q_to_p(&e), Err(EllipsoidError::Degenerate));
    }

    #[test]
    fn image_examples() {
        let e = q(&[vec![1.0]], &["x"]);
        let img = affine_image(&e, &Matrix::from_diag(&[2.0]), vec!["x".into()]).unwrap();
        assert_eq!(img.q[(0, 0)], 4.0);
        assert_eq!(q_to_p(&img).unwrap().p[(0, 0)], 0.25);

        let e = EllipsoidQ::new(SymMatrix::identity(2), names(2)).unwrap();
        let dup = Matrix::vstack(&[&Matrix::identity(2), &Matrix::identity(2)]).unwrap();
        let img = affine_image(&e, &dup, names(4)).unwrap();
        let want = Matrix::from_rows(&[
            vec![1.0, 0.0, 1.0, 0.0],
            vec![0.0, 1.0, 0.0, 1.0],
            vec![1.0, 0.0, 1.0, 0.0],
            vec![0.0, 1.0, 0.0, 1.0],
        ])
        .unwrap();
        assert_eq!(img.q.as_matrix(), &want);
        assert_eq!(crate::numerics::rank(&want, 1e-12).unwrap(), 2);
        assert!(affine_image(&e, &Matrix::identity(3), names(3)).is_err());
    }

    #[test]
    fn projection_examples() {
        let e = q(&[vec![1.0, 0.0], vec![0.0, 4.0]], &["a", "b"]);
        assert_eq!(project(&e, &["a"]).unwrap().q[(0, 0)], 1.0);
        let e = q(&[vec![2.0, 1.0], vec![1.0, 2.0]], &["a", "b"]);
        assert_eq!(project(&e, &["a"]).unwrap().q[(0, 0)], 2.0);
        assert_eq!(
            project(&e, &["c"]),
            Err(EllipsoidError::UnknownVariable("c".into()))
        );
    }

    #[test]
    fn sproc_identity_case() {
        let n = 3;
        let px = EllipsoidP::unit(SymMatrix::identity(n), var_names("x", n)).unwrap();
        let pxh = EllipsoidP::unit(SymMatrix::identity(n), var_names("xh", n)).unwrap();
        let cert = SProcCertificate::new(0.25, 0.25).unwrap();
        let pe = sproc_combine(&px, &pxh, &cert, var_names("e", n)).unwrap();
        // (1/gamma + 1/(1-alpha-gamma))^{-1} = (4 + 2)^{-1}
        let want = Matrix::identity(n).scale(1.0 / 6.0);
        assert!((pe.p.as_matrix() - &want).max_abs() < 1e-15);

        // homogeneity: doubling both inputs doubles the output
        let px2 = EllipsoidP::unit(px.p.scale(2.0), px.vars.clone()).unwrap();
        let pxh2 = EllipsoidP::unit(pxh.p.scale(2.0), pxh.vars.clone()).unwrap();
        let pe2 = sproc_combine(&px2, &pxh2, &cert, var_names("e", n)).unwrap();
        assert!((pe2.p.as_matrix() - &pe.p.scale(2.0)).max_abs() < 1e-14);
    }

    #[test]
    fn certificate_bounds() {
        assert!(SProcCertificate::new(0.5, 0.5).is_err());
        assert!(SProcCertificate::new(0.0, 0.5).is_err());
        assert!(SProcCertificate::new(0.2, -0.1).is_err());
        assert!(SProcCertificate::new(0.2, 0.7).is_ok());
    }

    #[test]
    fn membership_examples() {
        let e = EllipsoidQ::new(SymMatrix::identity(2), names(2)).unwrap();
        assert!(contains(&e, &[0.0, 0.0], 0.0).unwrap());
        assert!(!contains(&e, &[1.1, 0.0], 1e-12).unwrap());
        let d = q(&[vec![1.0, 1.0], vec![1.0, 1.0]], &["a", "b"]);
        let h = 0.5f64.sqrt();
        assert!(contains(&d, &[h, h], 1e-12).unwrap());
        for s in [1.0, 1e-3] {
            assert!(!contains(&d, &[h * s, -h * s], 1e-12).unwrap());
        }
    }

    #[test]
    fn inclusion_examples() {
        let a = EllipsoidQ::new(SymMatrix::identity(2), names(2)).unwrap();
        let b = EllipsoidQ::new(SymMatrix::identity(2).scale(2.0), names(2)).unwrap();
        assert!(inclusion(&a, &b, 0.0).unwrap());
        assert!(!inclusion(&b, &a, 0.0).unwrap());
        let t = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.5, -1.0]]).unwrap();
        let img = affine_image(&a, &t, names(2)).unwrap();
        assert!(inclusion(&img, &img, 0.0).unwrap());
    }
}
