//! General (non-symmetric) kernels: LU solves, matrix exponential, real
//! eigenvalues via Hessenberg reduction and shifted QR, discrete Lyapunov
//! sums.

use super::{sym_eig, Matrix, NumericsError, SymMatrix};

/// LU factorization with partial pivoting.
pub struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
}

impl Lu {
    pub fn new(m: &Matrix) -> Result<Self, NumericsError> {
        if !m.is_square() {
            return Err(NumericsError::Dimension("LU of a non-square matrix".into()));
        }
        if !m.is_finite() {
            return Err(NumericsError::NonFinite);
        }
        let n = m.rows();
        let mut lu = m.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = m.max_abs().max(f64::MIN_POSITIVE);
        for k in 0..n {
            let (p, pivot) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold(
                    (k, -1.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
            if pivot <= f64::EPSILON * scale * 1e-3 {
                return Err(NumericsError::Singular(format!("zero pivot at column {k}")));
            }
            if p != k {
                perm.swap(p, k);
                for j in 0..n {
                    let tmp = lu[(p, j)];
                    lu[(p, j)] = lu[(k, j)];
                    lu[(k, j)] = tmp;
                }
            }
            let d = lu[(k, k)];
            for i in (k + 1)..n {
                let f = lu[(i, k)] / d;
                lu[(i, k)] = f;
                if f != 0.0 {
                    for j in (k + 1)..n {
                        lu[(i, j)] -= f * lu[(k, j)];
                    }
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn solve(&self, b: &Matrix) -> Result<Matrix, NumericsError> {
        let n = self.lu.rows();
        if b.rows() != n {
            return Err(NumericsError::Dimension(format!(
                "right-hand side has {} rows, expected {n}",
                b.rows()
            )));
        }
        let mut x = Matrix::zeros(n, b.cols());
        for c in 0..b.cols() {
            let mut y: Vec<f64> = self.perm.iter().map(|&p| b[(p, c)]).collect();
            for i in 0..n {
                for k in 0..i {
                    y[i] -= self.lu[(i, k)] * y[k];
                }
            }
            for i in (0..n).rev() {
                for k in (i + 1)..n {
                    y[i] -= self.lu[(i, k)] * y[k];
                }
                y[i] /= self.lu[(i, i)];
            }
            for i in 0..n {
                x[(i, c)] = y[i];
            }
        }
        Ok(x)
    }
}

pub fn solve(m: &Matrix, b: &Matrix) -> Result<Matrix, NumericsError> {
    Lu::new(m)?.solve(b)
}

pub fn inverse(m: &Matrix) -> Result<Matrix, NumericsError> {
    solve(m, &Matrix::identity(m.rows()))
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

const THETA13: f64 = 5.371920351148152;

/// Matrix exponential by scaling and squaring with a degree-13 Padé
/// approximant.
pub fn mat_exp(m: &Matrix) -> Result<Matrix, NumericsError> {
    if !m.is_square() {
        return Err(NumericsError::Dimension(
            "exp of a non-square matrix".into(),
        ));
    }
    if !m.is_finite() {
        return Err(NumericsError::NonFinite);
    }
    let n = m.rows();
    let norm = m.norm_1();
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    if s > 1000 {
        return Err(NumericsError::Range(format!("1-norm {norm:e} too large")));
    }
    let a = m.scale(0.5f64.powi(s));
    let b = &PADE13;
    let id = Matrix::identity(n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let lin = |c: [f64; 4], ms: [&Matrix; 4]| -> Matrix {
        let mut acc = Matrix::zeros(n, n);
        for (ci, mi) in c.iter().zip(ms) {
            acc = &acc + &mi.scale(*ci);
        }
        acc
    };
    let u_inner = &a6 * &lin([b[13], b[11], b[9], 0.0], [&a6, &a4, &a2, &id]);
    let u_inner = &u_inner + &lin([b[7], b[5], b[3], b[1]], [&a6, &a4, &a2, &id]);
    let u = &a * &u_inner;
    let v_inner = &a6 * &lin([b[12], b[10], b[8], 0.0], [&a6, &a4, &a2, &id]);
    let v = &v_inner + &lin([b[6], b[4], b[2], b[0]], [&a6, &a4, &a2, &id]);
    let mut r = solve(&(&v - &u), &(&v + &u))?;
    for _ in 0..s {
        r = &r * &r;
    }
    if !r.is_finite() {
        return Err(NumericsError::Range("matrix exponential overflowed".into()));
    }
    Ok(r)
}

/// Eigenvalues of a general real matrix as `(re, im)` pairs.
pub fn eigenvalues(m: &Matrix) -> Result<Vec<(f64, f64)>, NumericsError> {
    if !m.is_square() {
        return Err(NumericsError::Dimension(
            "eigenvalues of a non-square matrix".into(),
        ));
    }
    if !m.is_finite() {
        return Err(NumericsError::NonFinite);
    }
    let mut a = m.to_rows();
    hessenberg(&mut a);
    hqr(&mut a)
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &Matrix) -> Result<f64, NumericsError> {
    Ok(eigenvalues(m)?
        .into_iter()
        .map(|(re, im)| re.hypot(im))
        .fold(0.0, f64::max))
}

// Gaussian-elimination reduction to upper Hessenberg form.
#[allow(clippy::needless_range_loop)]
fn hessenberg(a: &mut [Vec<f64>]) {
    let n = a.len();
    for m in 1..n.saturating_sub(1) {
        let mut x = 0.0f64;
        let mut i = m;
        for j in m..n {
            if a[j][m - 1].abs() > x.abs() {
                x = a[j][m - 1];
                i = j;
            }
        }
        if i != m {
            for j in (m - 1)..n {
                let t = a[i][j];
                a[i][j] = a[m][j];
                a[m][j] = t;
            }
            for row in a.iter_mut() {
                row.swap(i, m);
            }
        }
        if x != 0.0 {
            for i in (m + 1)..n {
                let mut y = a[i][m - 1];
                if y != 0.0 {
                    y /= x;
                    a[i][m - 1] = y;
                    for j in m..n {
                        a[i][j] -= y * a[m][j];
                    }
                    for row in a.iter_mut() {
                        row[m] += y * row[i];
                    }
                }
            }
        }
    }
    for (i, row) in a.iter_mut().enumerate() {
        for v in row.iter_mut().take(i.saturating_sub(1)) {
            *v = 0.0;
        }
    }
}

// Francis double-shift QR on an upper Hessenberg matrix.
#[allow(clippy::many_single_char_names)]
#[allow(unused_assignments)]
fn hqr(a: &mut [Vec<f64>]) -> Result<Vec<(f64, f64)>, NumericsError> {
    let n = a.len() as isize;
    let mut wr = vec![(0.0, 0.0); n as usize];
    let idx = |i: isize| i as usize;
    let mut anorm = 0.0;
    for i in 0..n {
        for j in (i - 1).max(0)..n {
            anorm += a[idx(i)][idx(j)].abs();
        }
    }
    let eps = f64::EPSILON;
    let mut nn = n - 1;
    let mut t = 0.0;
    let (mut p, mut q, mut r, mut s, mut w, mut x, mut y, mut z) = (
        0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64,
    );
    while nn >= 0 {
        let mut its = 0;
        loop {
            let mut l = nn;
            while l > 0 {
                s = a[idx(l - 1)][idx(l - 1)].abs() + a[idx(l)][idx(l)].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[idx(l)][idx(l - 1)].abs() <= eps * s {
                    a[idx(l)][idx(l - 1)] = 0.0;
                    break;
                }
                l -= 1;
            }
            x = a[idx(nn)][idx(nn)];
            if l == nn {
                wr[idx(nn)] = (x + t, 0.0);
                nn -= 1;
                break;
            }
            y = a[idx(nn - 1)][idx(nn - 1)];
            w = a[idx(nn)][idx(nn - 1)] * a[idx(nn - 1)][idx(nn)];
            if l == nn - 1 {
                p = 0.5 * (y - x);
                q = p * p + w;
                z = q.abs().sqrt();
                x += t;
                if q >= 0.0 {
                    z = p + z.copysign(p);
                    wr[idx(nn - 1)] = (x + z, 0.0);
                    wr[idx(nn)] = (x + z, 0.0);
                    if z != 0.0 {
                        wr[idx(nn)] = (x - w / z, 0.0);
                    }
                } else {
                    wr[idx(nn)] = (x + p, -z);
                    wr[idx(nn - 1)] = (x + p, z);
                }
                nn -= 2;
                break;
            }
            if its == 60 {
                return Err(NumericsError::NoConvergence(
                    "QR eigenvalue iteration".into(),
                ));
            }
            if its == 10 || its == 20 {
                t += x;
                for i in 0..=nn {
                    a[idx(i)][idx(i)] -= x;
                }
                s = a[idx(nn)][idx(nn - 1)].abs() + a[idx(nn - 1)][idx(nn - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            let mut m = nn - 2;
            loop {
                z = a[idx(m)][idx(m)];
                r = x - z;
                s = y - z;
                p = (r * s - w) / a[idx(m + 1)][idx(m)] + a[idx(m)][idx(m + 1)];
                q = a[idx(m + 1)][idx(m + 1)] - z - r - s;
                r = a[idx(m + 2)][idx(m + 1)];
                s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[idx(m)][idx(m - 1)].abs() * (q.abs() + r.abs());
                let v = p.abs()
                    * (a[idx(m - 1)][idx(m - 1)].abs() + z.abs() + a[idx(m + 1)][idx(m + 1)].abs());
                if u <= eps * v {
                    break;
                }
                m -= 1;
            }
            for i in m..(nn - 1) {
                a[idx(i + 2)][idx(i)] = 0.0;
                if i != m {
                    a[idx(i + 2)][idx(i - 1)] = 0.0;
                }
            }
            let mut k = m;
            while k < nn {
                if k != m {
                    p = a[idx(k)][idx(k - 1)];
                    q = a[idx(k + 1)][idx(k - 1)];
                    r = 0.0;
                    if k + 1 != nn {
                        r = a[idx(k + 2)][idx(k - 1)];
                    }
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                s = (p * p + q * q + r * r).sqrt().copysign(p);
                if s != 0.0 {
                    if k == m {
                        if l != m {
                            a[idx(k)][idx(k - 1)] = -a[idx(k)][idx(k - 1)];
                        }
                    } else {
                        a[idx(k)][idx(k - 1)] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nn {
                        p = a[idx(k)][idx(j)] + q * a[idx(k + 1)][idx(j)];
                        if k + 1 != nn {
                            p += r * a[idx(k + 2)][idx(j)];
                            a[idx(k + 2)][idx(j)] -= p * z;
                        }
                        a[idx(k + 1)][idx(j)] -= p * y;
                        a[idx(k)][idx(j)] -= p * x;
                    }
                    let mmin = if nn < k + 3 { nn } else { k + 3 };
                    for i in l..=mmin {
                        p = x * a[idx(i)][idx(k)] + y * a[idx(i)][idx(k + 1)];
                        if k + 1 != nn {
                            p += z * a[idx(i)][idx(k + 2)];
                            a[idx(i)][idx(k + 2)] -= p * r;
                        }
                        a[idx(i)][idx(k + 1)] -= p * q;
                        a[idx(i)][idx(k)] -= p;
                    }
                }
                k += 1;
            }
            if l >= nn - 1 {
                break;
            }
        }
    }
    Ok(wr)
}

/// Solves the discrete Lyapunov equation `X = A X A^T + W` by Smith
/// doubling. Requires `spectral_radius(A) < 1`.
pub fn discrete_lyapunov(a: &Matrix, w: &SymMatrix) -> Result<SymMatrix, NumericsError> {
    if !a.is_square() || a.rows() != w.dim() {
        return Err(NumericsError::Dimension(
            "Lyapunov operands disagree".into(),
        ));
    }
    let rho = spectral_radius(a)?;
    if rho >= 1.0 {
        return Err(NumericsError::Unstable(rho));
    }
    let mut ak = a.clone();
    let mut x = w.as_matrix().clone();
    for _ in 0..64 {
        let inc = ak.congruence(&x)?;
        x = &x + &inc;
        ak = &ak * &ak;
        if inc.max_abs() <= 1e-18 * x.max_abs() || ak.max_abs() < 1e-300 {
            break;
        }
    }
    if !x.is_finite() {
        return Err(NumericsError::Range("Lyapunov sum overflowed".into()));
    }
    Ok(SymMatrix::from_symmetric_part(&x))
}

/// Numerical rank from the eigenvalues of `M M^T`.
pub fn rank(m: &Matrix, rel_tol: f64) -> Result<usize, NumericsError> {
    let g = SymMatrix::from_symmetric_part(&(m * &m.transpose()));
    let eig = sym_eig(&g)?;
    let top = eig.max().max(0.0);
    Ok(eig
        .values
        .iter()
        .filter(|&&v| v > rel_tol * rel_tol * top)
        .count())
}
