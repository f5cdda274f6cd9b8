//! Symmetric matrices and the symmetric-matrix kernels: Cholesky-based PSD
//! test, Jacobi eigensolver, SPD solves.

use std::ops::Deref;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{Matrix, NumericsError};

/// A real symmetric matrix. Construction symmetrizes its input, so the
/// upper and lower triangles always agree bit-for-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix(Matrix);

impl SymMatrix {
    /// Wraps a square matrix, rejecting asymmetry beyond `1e-9 * (1 + max|m|)`.
    pub fn new(m: Matrix) -> Result<Self, NumericsError> {
        if !m.is_square() {
            return Err(NumericsError::Dimension(format!(
                "symmetric matrix must be square, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        if !m.is_finite() {
            return Err(NumericsError::NonFinite);
        }
        let slack = 1e-9 * (1.0 + m.max_abs());
        let n = m.rows();
        for i in 0..n {
            for j in (i + 1)..n {
                if (m[(i, j)] - m[(j, i)]).abs() > slack {
                    return Err(NumericsError::NotSymmetric { row: i, col: j });
                }
            }
        }
        Ok(Self(m.symmetrize()))
    }

    /// Symmetrizes unconditionally. For matrices that are symmetric up to
    /// rounding by construction (congruences, sums of symmetric terms).
    pub fn from_symmetric_part(m: &Matrix) -> Self {
        assert!(m.is_square(), "symmetric part of a non-square matrix");
        Self(m.symmetrize())
    }

    pub fn identity(n: usize) -> Self {
        Self(Matrix::identity(n))
    }

    pub fn from_diag(d: &[f64]) -> Self {
        Self(Matrix::from_diag(d))
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.scale(s))
    }

    pub fn add(&self, other: &SymMatrix) -> Self {
        Self(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMatrix) -> Self {
        Self(&self.0 - &other.0)
    }

    pub fn shift(&self, s: f64) -> Self {
        let mut m = self.0.clone();
        for i in 0..m.rows() {
            m[(i, i)] += s;
        }
        Self(m)
    }

    /// `T * self * T^T`, symmetrized.
    pub fn congruence(&self, t: &Matrix) -> Result<SymMatrix, NumericsError> {
        Ok(Self::from_symmetric_part(&t.congruence(&self.0)?))
    }

    pub fn block_diag(blocks: &[&SymMatrix]) -> SymMatrix {
        let mats: Vec<&Matrix> = blocks.iter().map(|b| &b.0).collect();
        Self(Matrix::block_diag(&mats))
    }

    pub fn principal(&self, idx: &[usize]) -> SymMatrix {
        Self(self.0.select(idx, idx))
    }
}

impl Deref for SymMatrix {
    type Target = Matrix;

    fn deref(&self) -> &Matrix {
        &self.0
    }
}

impl Serialize for SymMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SymMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        SymMatrix::new(Matrix::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

/// Outcome of [`cholesky_psd`].
#[derive(Clone, Debug)]
pub struct PsdTest {
    pub psd: bool,
    /// Lower-triangular factor of `M + tol*I` when the test passes.
    pub factor: Option<Matrix>,
}

/// Cholesky test of `M + tol*I`. A pivot below `-tol` rejects; pivots in
/// `[-tol, 0]` are treated as zero (semidefinite direction).
pub fn cholesky_psd(m: &SymMatrix, tol: f64) -> Result<PsdTest, NumericsError> {
    if !(tol >= 0.0) {
        return Err(NumericsError::Input(format!("negative tolerance {tol}")));
    }
    if !m.is_finite() {
        return Err(NumericsError::NonFinite);
    }
    let n = m.dim();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)] + tol;
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -tol {
            return Ok(PsdTest {
                psd: false,
                factor: None,
            });
        }
        if d <= 0.0 {
            // zero pivot: the rest of the column must vanish too
            for i in (j + 1)..n {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if s.abs() > tol.max(f64::EPSILON) * (1.0 + m.max_abs()) * 16.0 {
                    return Ok(PsdTest {
                        psd: false,
                        factor: None,
                    });
                }
            }
            continue;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(PsdTest {
        psd: true,
        factor: Some(l),
    })
}

/// Strict Cholesky factor `L` with `M = L L^T`. Fails if `M` is not
/// positive definite.
pub fn cholesky(m: &SymMatrix) -> Result<Matrix, NumericsError> {
    if !m.is_finite() {
        return Err(NumericsError::NonFinite);
    }
    let n = m.dim();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) {
            return Err(NumericsError::Singular(format!(
                "non-positive pivot {d:e} at column {j}"
            )));
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Solves `L X = B` for lower-triangular `L`.
pub fn solve_lower(l: &Matrix, b: &Matrix) -> Matrix {
    let n = l.rows();
    let mut x = b.clone();
    for c in 0..b.cols() {
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

/// Solves `L^T X = B` for lower-triangular `L`.
pub fn solve_lower_transpose(l: &Matrix, b: &Matrix) -> Matrix {
    let n = l.rows();
    let mut x = b.clone();
    for c in 0..b.cols() {
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

/// Solves `M X = B` for symmetric positive definite `M`.
pub fn solve_spd(m: &SymMatrix, b: &Matrix) -> Result<Matrix, NumericsError> {
    if b.rows() != m.dim() {
        return Err(NumericsError::Dimension(format!(
            "right-hand side has {} rows, matrix is {}x{}",
            b.rows(),
            m.dim(),
            m.dim()
        )));
    }
    let l = cholesky(m)?;
    Ok(solve_lower_transpose(&l, &solve_lower(&l, b)))
}

/// Inverse of a symmetric positive definite matrix.
pub fn inverse_spd(m: &SymMatrix) -> Result<SymMatrix, NumericsError> {
    let x = solve_spd(m, &Matrix::identity(m.dim()))?;
    Ok(SymMatrix::from_symmetric_part(&x))
}

/// Symmetric eigendecomposition.
#[derive(Clone, Debug)]
pub struct SymEig {
    /// Ascending.
    pub values: Vec<f64>,
    /// Column `k` is the unit eigenvector for `values[k]`.
    pub vectors: Matrix,
}

impl SymEig {
    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn max(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }
}

/// Cyclic Jacobi eigensolver.
pub fn sym_eig(m: &SymMatrix) -> Result<SymEig, NumericsError> {
    if !m.is_finite() {
        return Err(NumericsError::NonFinite);
    }
    let n = m.dim();
    let mut a = m.as_matrix().clone();
    let mut v = Matrix::identity(n);
    let scale = a.frobenius_norm();
    if scale == 0.0 {
        return Ok(SymEig {
            values: vec![0.0; n],
            vectors: v,
        });
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() <= 1e-17 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let rows: Vec<usize> = (0..n).collect();
    Ok(SymEig {
        values,
        vectors: v.select(&rows, &order),
    })
}

pub fn max_eigenvalue(m: &SymMatrix) -> Result<f64, NumericsError> {
    Ok(sym_eig(m)?.max())
}

pub fn min_eigenvalue(m: &SymMatrix) -> Result<f64, NumericsError> {
    Ok(sym_eig(m)?.min())
}

/// Principal square root of a PSD matrix. Eigenvalues in `[-tol, 0)` are
/// clamped to zero; anything more negative is rejected.
pub fn sym_sqrt(m: &SymMatrix, tol: f64) -> Result<SymMatrix, NumericsError> {
    let eig = sym_eig(m)?;
    if eig.min() < -tol {
        return Err(NumericsError::NotPsd(eig.min()));
    }
    let roots: Vec<f64> = eig.values.iter().map(|v| v.max(0.0).sqrt()).collect();
    let d = Matrix::from_diag(&roots);
    Ok(SymMatrix::from_symmetric_part(&eig.vectors.congruence(&d)?))
}

/// Generalized maximum eigenvalue `max x^T S x / x^T P x` for `P` positive definite.
pub fn max_generalized_eigenvalue(s: &SymMatrix, p: &SymMatrix) -> Result<f64, NumericsError> {
    let l = cholesky(p)?;
    // L^{-1} S L^{-T}
    let y = solve_lower(&l, s.as_matrix());
    let z = solve_lower(&l, &y.transpose());
    max_eigenvalue(&SymMatrix::from_symmetric_part(&z))
}

/// `log det` of a positive definite matrix.
pub fn log_det_spd(m: &SymMatrix) -> Result<f64, NumericsError> {
    let l = cholesky(m)?;
    Ok((0..m.dim()).map(|i| 2.0 * l[(i, i)].ln()).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym(rows: &[Vec<f64>]) -> SymMatrix {
        SymMatrix::new(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn psd_examples() {
        assert!(cholesky_psd(&SymMatrix::identity(3), 0.0).unwrap().psd);
        let indefinite = sym(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(!cholesky_psd(&indefinite, 0.0).unwrap().psd);
        let rank_one = sym(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert!(cholesky_psd(&rank_one, 1e-12).unwrap().psd);
        assert!(cholesky_psd(&rank_one, 0.0).unwrap().psd);
    }

    #[test]
    fn psd_rejects_bad_input() {
        assert!(cholesky_psd(&SymMatrix::identity(2), -1.0).is_err());
        let m = Matrix::from_rows(&[vec![f64::NAN]]).unwrap();
        assert!(matches!(SymMatrix::new(m), Err(NumericsError::NonFinite)));
    }

    #[test]
    fn eig_examples() {
        let e = sym_eig(&SymMatrix::from_diag(&[2.0, 1.0])).unwrap();
        assert_eq!(e.values, vec![1.0, 2.0]);
        let r = sym_eig(&sym(&[vec![0.0, 1.0], vec![1.0, 0.0]])).unwrap();
        assert!((r.values[0] + 1.0).abs() < 1e-15);
        assert!((r.values[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn eig_matches_characteristic_roots_2x2() {
        // roots of l^2 - tr l + det
        let m = sym(&[vec![3.0, -1.5], vec![-1.5, 0.25]]);
        let (tr, det): (f64, f64) = (3.25, 3.0 * 0.25 - 2.25);
        let disc = (tr * tr - 4.0 * det).sqrt();
        let e = sym_eig(&m).unwrap();
        assert!((e.values[0] - (tr - disc) / 2.0).abs() < 1e-13);
        assert!((e.values[1] - (tr + disc) / 2.0).abs() < 1e-13);
    }

    #[test]
    fn eig_matches_characteristic_roots_3x3() {
        // [[2,1,0],[1,2,1],[0,1,2]] has eigenvalues 2 - sqrt2, 2, 2 + sqrt2
        let m = sym(&[
            vec![2.0, 1.0, 0.0],
            vec![1.0, 2.0, 1.0],
            vec![0.0, 1.0, 2.0],
        ]);
        let e = sym_eig(&m).unwrap();
        let s = 2f64.sqrt();
        for (got, want) in e.values.iter().zip([2.0 - s, 2.0, 2.0 + s]) {
            assert!((got - want).abs() < 1e-13);
        }
    }

    #[test]
    fn spd_solves() {
        let b = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(solve_spd(&SymMatrix::identity(2), &b).unwrap(), b);
        let inv = inverse_spd(&SymMatrix::from_diag(&[4.0, 4.0])).unwrap();
        assert_eq!(inv.as_matrix(), &Matrix::from_diag(&[0.25, 0.25]));
        let bad = sym(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(matches!(
            solve_spd(&bad, &b),
            Err(NumericsError::Singular(_))
        ));
    }

    #[test]
    fn sqrt_squares_back() {
        let m = sym(&[vec![4.0, 1.0], vec![1.0, 3.0]]);
        let r = sym_sqrt(&m, 0.0).unwrap();
        let back = r.as_matrix() * r.as_matrix();
        assert!((&back - m.as_matrix()).max_abs() < 1e-13);
        assert!(sym_sqrt(&SymMatrix::from_diag(&[-1.0]), 1e-9).is_err());
    }
}
