mod common;

use common::{spd, square, symmetric};
use fdcert::numerics::{
    cholesky_psd, discrete_lyapunov, eigenvalues, inverse, inverse_spd, mat_exp, solve_spd,
    spectral_radius, sym_eig, sym_sqrt, Matrix, SymMatrix,
};
use proptest::prelude::*;

fn identity_error(m: &Matrix) -> f64 {
    (m - &Matrix::identity(m.rows())).max_abs()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn psd_verdict_bounds_the_spectrum(m in symmetric(6, 5.0), tol in 1e-12..1e-3f64) {
        let t = cholesky_psd(&m, tol).unwrap();
        if t.psd {
            prop_assert!(sym_eig(&m).unwrap().min() >= -2.0 * tol);
        }
    }

    #[test]
    fn shifted_gram_matrices_are_psd(m in spd(6, 0.0)) {
        prop_assert!(cholesky_psd(&m, 1e-9 * (1.0 + m.max_abs())).unwrap().psd);
    }

    #[test]
    fn inverse_times_matrix_is_identity(m in spd(6, 0.5)) {
        let inv = inverse(m.as_matrix()).unwrap();
        prop_assert!(identity_error(&(&inv * m.as_matrix())) <= 1e-9);
        let inv = inverse_spd(&m).unwrap();
        prop_assert!(identity_error(&(inv.as_matrix() * m.as_matrix())) <= 1e-9);
    }

    #[test]
    fn exp_of_negation_is_the_inverse(m in square(6, 5.0)) {
        let m = if m.norm_1() > 10.0 { m.scale(10.0 / m.norm_1()) } else { m };
        let p = &mat_exp(&m).unwrap() * &mat_exp(&m.scale(-1.0)).unwrap();
        prop_assert!(identity_error(&p) <= 1e-9, "error {}", identity_error(&p));
    }

    #[test]
    fn eigenvalues_sum_to_the_trace(m in symmetric(6, 10.0)) {
        let eig = sym_eig(&m).unwrap();
        let sum: f64 = eig.values.iter().sum();
        prop_assert!((sum - m.as_matrix().trace()).abs() <= 1e-10 * m.as_matrix().frobenius_norm().max(1.0));
        prop_assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn eigendecomposition_reconstructs(m in symmetric(6, 10.0)) {
        let eig = sym_eig(&m).unwrap();
        let v = &eig.vectors;
        let scale = m.as_matrix().frobenius_norm().max(1.0);
        prop_assert!(identity_error(&(&v.transpose() * v)) <= 1e-10);
        let back = &(v * &Matrix::from_diag(&eig.values)) * &v.transpose();
        prop_assert!((&back - m.as_matrix()).max_abs() <= 1e-10 * scale);
    }

    #[test]
    fn spd_solve_has_small_residual(m in spd(6, 0.5), b in common::matrix(6, 2, 10.0)) {
        let n = m.dim();
        let b = b.submatrix(0, 0, n, 2);
        let x = solve_spd(&m, &b).unwrap();
        let res = &(m.as_matrix() * &x) - &b;
        prop_assert!(res.max_abs() <= 1e-9 * (1.0 + b.max_abs()));
    }

    #[test]
    fn square_root_squares_back(m in spd(6, 0.1)) {
        let r = sym_sqrt(&m, 0.0).unwrap();
        let back = r.as_matrix() * r.as_matrix();
        prop_assert!((&back - m.as_matrix()).max_abs() <= 1e-9 * m.max_abs().max(1.0));
    }
}

#[test]
fn exp_of_rotation_generator() {
    let t = 0.7;
    let m = Matrix::from_rows(&[vec![0.0, t], vec![-t, 0.0]]).unwrap();
    let e = mat_exp(&m).unwrap();
    let want = Matrix::from_rows(&[vec![t.cos(), t.sin()], vec![-t.sin(), t.cos()]]).unwrap();
    assert!((&e - &want).max_abs() < 1e-14);
}

#[test]
fn exp_of_diagonal_and_nilpotent() {
    let d = mat_exp(&Matrix::from_diag(&[1.0, -2.0, 0.5])).unwrap();
    for (i, v) in [1.0f64, -2.0, 0.5].iter().enumerate() {
        assert!((d[(i, i)] - v.exp()).abs() < 1e-14 * v.exp().max(1.0));
    }
    let n = Matrix::from_rows(&[vec![0.0, 3.0], vec![0.0, 0.0]]).unwrap();
    let e = mat_exp(&n).unwrap();
    let want = Matrix::from_rows(&[vec![1.0, 3.0], vec![0.0, 1.0]]).unwrap();
    assert!((&e - &want).max_abs() < 1e-14);
}

#[test]
fn psd_test_rejects_indefinite() {
    let m = SymMatrix::from_diag(&[1.0, -1e-3]);
    assert!(!cholesky_psd(&m, 1e-6).unwrap().psd);
    assert!(cholesky_psd(&m, 1e-2).unwrap().psd);
    assert!(
        cholesky_psd(&SymMatrix::from_diag(&[1.0, 0.0]), 0.0)
            .unwrap()
            .psd
    );
}

#[test]
fn spectral_radius_of_triangular_and_rotation() {
    let t = Matrix::from_rows(&[
        vec![0.5, 9.0, 1.0],
        vec![0.0, -0.9, 4.0],
        vec![0.0, 0.0, 0.2],
    ])
    .unwrap();
    assert!((spectral_radius(&t).unwrap() - 0.9).abs() < 1e-12);
    let (c, s) = (0.3f64.cos() * 0.8, 0.3f64.sin() * 0.8);
    let r = Matrix::from_rows(&[vec![c, -s], vec![s, c]]).unwrap();
    assert!((spectral_radius(&r).unwrap() - 0.8).abs() < 1e-12);
    let ev = eigenvalues(&r).unwrap();
    assert!(ev
        .iter()
        .all(|(re, im)| (re - c).abs() < 1e-12 && (im.abs() - s).abs() < 1e-12));
}

#[test]
fn lyapunov_solution_of_scalar_and_matrix() {
    // x = a² x + w
    let x = discrete_lyapunov(&Matrix::from_diag(&[0.5]), &SymMatrix::from_diag(&[3.0])).unwrap();
    assert!((x.as_matrix()[(0, 0)] - 4.0).abs() < 1e-14);
    let a = Matrix::from_rows(&[vec![0.9, 0.4], vec![-0.1, 0.7]]).unwrap();
    let w = SymMatrix::identity(2);
    let x = discrete_lyapunov(&a, &w).unwrap();
    let res = &(&a.congruence(x.as_matrix()).unwrap() + w.as_matrix()) - x.as_matrix();
    assert!(res.max_abs() < 1e-12 * x.max_abs());
    assert!(discrete_lyapunov(&Matrix::from_diag(&[1.0]), &w.principal(&[0])).is_err());
}

#[test]
fn observer_error_matrix_decays() {
    let (m, _) = common::heli();
    let d = fdcert::model::assemble(m).unwrap();
    let rho = spectral_radius(&d.a_hat).unwrap();
    assert!(rho < 1.0);
    // ‖Âᵏ‖ shrinks at the spectral rate
    let mut p = Matrix::identity(d.a_hat.rows());
    for _ in 0..2000 {
        p = &p * &d.a_hat;
    }
    assert!(p.max_abs() < 1e-6, "{}", p.max_abs());
}
