mod common;

use common::heli;
use fdcert::model::{
    assemble, build_fault_input, build_plant_matrices, discretize_zoh, is_controllable,
    is_observable, observer_step_innovation, observer_step_split, observer_step_stacked,
    parse_model, FaultModel, Mode, ModelError, PhysicalParams,
};
use fdcert::numerics::{spectral_radius, Matrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn params() -> PhysicalParams {
    PhysicalParams {
        m_f: 0.713,
        m_w: 1.87,
        l_a: 0.66,
        l_h: 0.178,
        l_m: 0.47,
        l_w: 0.47,
        l_f: 0.178,
        k_f: 0.1188,
        g: 9.81,
    }
}

fn rel_close(a: &[f64], b: &[f64], rtol: f64) -> bool {
    let scale = a.iter().chain(b).fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= rtol * scale)
}

fn draw(rng: &mut ChaCha8Rng, n: usize, r: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-r..r)).collect()
}

#[test]
fn zoh_composes_over_two_steps() {
    let sys = build_plant_matrices(&params()).unwrap();
    for dt in [0.001, 0.01, 0.05] {
        let one = discretize_zoh(&sys, dt).unwrap();
        let two = discretize_zoh(&sys, 2.0 * dt).unwrap();
        let a2 = &one.a * &one.a;
        assert!((&a2 - &two.a).max_abs() <= 1e-10, "dt {dt}");
        // B over two steps is (A + I) B
        let b2 = &(&one.a + &Matrix::identity(6)) * &one.b;
        assert!((&b2 - &two.b).max_abs() <= 1e-10, "dt {dt}");
    }
}

#[test]
fn shipped_plant_matches_its_physics() {
    let (m, _) = heli();
    let sys = build_plant_matrices(&params()).unwrap();
    let d = discretize_zoh(&sys, m.dt).unwrap();
    assert!((&d.a - &m.plant.a).max_abs() < 1e-15);
    assert!((&d.b - &m.plant.b).max_abs() < 1e-15);
    assert!(is_controllable(&sys.a, &sys.b).unwrap());
    assert!(is_observable(&sys.a, &sys.c).unwrap());
    // double integrators in elevation, pitch and travel
    assert!(sys.a[(0, 3)] == 1.0 && sys.a[(1, 4)] == 1.0 && sys.a[(2, 5)] == 1.0);
    assert_eq!(sys.b[(3, 0)], sys.b[(3, 1)]);
    assert_eq!(sys.b[(4, 0)], -sys.b[(4, 1)]);
}

#[test]
fn nonpositive_parameter_is_rejected() {
    let mut p = params();
    p.k_f = 0.0;
    let err = build_plant_matrices(&p).unwrap_err();
    assert!(err.to_string().contains("K_f"));
}

#[test]
fn observer_forms_agree() {
    let (m, _) = heli();
    let d = assemble(m).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (n, p) = (m.plant.state_dim(), m.plant.input_dim());
    for _ in 0..1000 {
        let x = draw(&mut rng, n, 1.0);
        let xhat = draw(&mut rng, n, 1.0);
        let u = draw(&mut rng, p, 10.0);
        let y = m.plant.c.mul_vec(&x).unwrap();
        let a = observer_step_innovation(m, &xhat, &u, &y);
        let b = observer_step_split(&d, m, &xhat, &u, &y);
        let c = observer_step_stacked(&d, &xhat, &u, &x);
        assert!(rel_close(&a, &b, 1e-12));
        assert!(rel_close(&a, &c, 1e-12));
    }
}

#[test]
fn error_dynamics_follow_the_observer_matrix() {
    // nominal: e⁺ = Â e; faulty with f = -u: e⁺ = Â e + E f
    let (m, _) = heli();
    let d = assemble(m).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, p) = (m.plant.state_dim(), m.plant.input_dim());
    for mode in [Mode::Nominal, Mode::Faulty] {
        let bx = m.actuated_b(mode);
        for _ in 0..200 {
            let x = draw(&mut rng, n, 1.0);
            let xhat = draw(&mut rng, n, 1.0);
            let u = draw(&mut rng, p, 10.0);
            let y = m.plant.c.mul_vec(&x).unwrap();
            let xn: Vec<f64> = m
                .plant
                .a
                .mul_vec(&x)
                .unwrap()
                .iter()
                .zip(bx.mul_vec(&u).unwrap())
                .map(|(a, b)| a + b)
                .collect();
            let xh = observer_step_innovation(m, &xhat, &u, &y);
            let got: Vec<f64> = xn.iter().zip(&xh).map(|(a, b)| a - b).collect();
            let e: Vec<f64> = x.iter().zip(&xhat).map(|(a, b)| a - b).collect();
            let mut want = d.a_hat.mul_vec(&e).unwrap();
            if mode == Mode::Faulty {
                let f: Vec<f64> = u.iter().map(|v| -v).collect();
                for (w, ef) in want.iter_mut().zip(d.e.mul_vec(&f).unwrap()) {
                    *w += ef;
                }
            }
            assert!(rel_close(&got, &want, 1e-12));
        }
    }
}

#[test]
fn zero_gain_leaves_the_plant_matrix() {
    let (m, _) = heli();
    let mut open = m.clone();
    open.observer_gain = Matrix::zeros(6, 3);
    // the open plant has integrators, so Â = A is not Schur
    match assemble(&open) {
        Err(ModelError::UnstableObserver(rho)) => assert!(rho >= 1.0),
        other => panic!("expected an unstable observer, got {other:?}"),
    }
    assert!((spectral_radius(&open.plant.a).unwrap() - 1.0).abs() < 1e-6);
}

#[test]
fn no_degradation_means_no_fault_input() {
    let (m, _) = heli();
    let fault = FaultModel {
        x: Matrix::identity(2),
        sigma: 1.0,
    };
    let e = build_fault_input(&m.plant, &fault).unwrap();
    assert_eq!(e.max_abs(), 0.0);
    let mut same = m.clone();
    same.fault = fault;
    let d = assemble(&same).unwrap();
    assert_eq!(d.closed_nominal.a, d.closed_faulty.a);
}

#[test]
fn fault_input_has_the_wrong_shape() {
    let (m, _) = heli();
    let fault = FaultModel {
        x: Matrix::identity(3),
        sigma: 1.0,
    };
    assert!(build_fault_input(&m.plant, &fault).is_err());
}

#[test]
fn model_file_rejects_bad_effectiveness() {
    let text = std::fs::read_to_string(common::models_dir().join("heli3dof.toml")).unwrap();
    let bad = text.replace(
        "X = [[0.5, 0.0], [0.0, 0.5]]",
        "X = [[1.5, 0.0], [0.0, 0.5]]",
    );
    assert_ne!(bad, text, "fixture edit must apply");
    let err = parse_model(&bad).unwrap_err();
    assert!(err.to_string().contains("effectiveness"), "{err}");
}

proptest! {
    #[test]
    fn fault_input_is_linear_in_the_loss(
        a in prop::collection::vec(0.0..1.0f64, 2),
        b in prop::collection::vec(0.0..1.0f64, 2),
        s in 0.0..1.0f64,
    ) {
        let (m, _) = heli();
        let loss = |d: &[f64]| {
            let fault = FaultModel { x: Matrix::from_diag(&[1.0 - d[0], 1.0 - d[1]]), sigma: 1.0 };
            build_fault_input(&m.plant, &fault).unwrap()
        };
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| s * x + (1.0 - s) * y).collect();
        let lhs = loss(&mix);
        let rhs = &loss(&a).scale(s) + &loss(&b).scale(1.0 - s);
        prop_assert!((&lhs - &rhs).max_abs() <= 1e-15);
    }
}
