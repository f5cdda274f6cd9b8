//! Plant, controller and observer models, discretization, and assembly of
//! the discrete closed-loop, observer-input and error-dynamics systems.

mod config;

pub use config::{load_model, parse_model, ConfigError};

use thiserror::Error;

use crate::numerics::{mat_exp, rank, spectral_radius, Matrix, NumericsError, SymMatrix};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("observer error dynamics are not stable: spectral radius of A - LC is {0:.6}")]
    UnstableObserver(f64),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// `ẋ = A x + B u`, `y = C x`.
#[derive(Clone, Debug, PartialEq)]
pub struct LtiContinuous {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
}

/// `x⁺ = A x + B u`, `y = C x`, sampled every `dt` seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct LtiDiscrete {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub dt: f64,
}

impl LtiContinuous {
    pub fn new(a: Matrix, b: Matrix, c: Matrix) -> Result<Self, ModelError> {
        check_lti_dims(&a, &b, &c)?;
        Ok(Self { a, b, c })
    }
}

impl LtiDiscrete {
    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.rows()
    }
}

fn check_lti_dims(a: &Matrix, b: &Matrix, c: &Matrix) -> Result<(), ModelError> {
    if !a.is_square() || b.rows() != a.rows() || c.cols() != a.rows() {
        return Err(ModelError::Invalid(format!(
            "inconsistent state-space dimensions: A {:?}, B {:?}, C {:?}",
            a.shape(),
            b.shape(),
            c.shape()
        )));
    }
    if !(a.is_finite() && b.is_finite() && c.is_finite()) {
        return Err(ModelError::Invalid("non-finite state-space entry".into()));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Deserialize, serde::Serialize)]
pub struct PhysicalParams {
    pub m_f: f64,
    pub m_w: f64,
    #[serde(rename = "L_a")]
    pub l_a: f64,
    #[serde(rename = "L_h")]
    pub l_h: f64,
    #[serde(rename = "L_m")]
    pub l_m: f64,
    #[serde(rename = "L_w")]
    pub l_w: f64,
    #[serde(rename = "L_f")]
    pub l_f: f64,
    #[serde(rename = "K_f")]
    pub k_f: f64,
    pub g: f64,
}

/// Actuator degradation `ū = X u` with fault-norm bound `sigma`.
#[derive(Clone, Debug, PartialEq)]
pub struct FaultModel {
    pub x: Matrix,
    pub sigma: f64,
}

/// `x_c⁺ = A_c x_c + B_y y + B_r y_c`, `u = C_c x_c + D_c y`.
#[derive(Clone, Debug, PartialEq)]
pub struct Controller {
    pub a: Matrix,
    pub b_y: Matrix,
    pub b_r: Matrix,
    pub c: Matrix,
    pub d: Matrix,
}

impl Controller {
    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn reference_dim(&self) -> usize {
        self.b_r.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdModel {
    pub name: String,
    pub plant: LtiDiscrete,
    pub controller: Controller,
    pub observer_gain: Matrix,
    /// Radius of the ball holding the initial estimation error.
    pub initial_error_radius: f64,
    pub fault: FaultModel,
    /// Shape (Q form) of the reference bound `{y_c | [[1, y_cᵀ], [y_c, Q]] ⪰ 0}`.
    pub reference_shape: SymMatrix,
    pub dt: f64,
}

/// A single linear loop `x := A x + B input` with `inputᵀ P1 input <= 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct LoopModel {
    pub name: String,
    pub a: Matrix,
    pub b: Matrix,
    pub input_p: SymMatrix,
    pub state: String,
    pub input: String,
    /// Largest LMI eigenvalue accepted for the loop invariant; zero or
    /// negative demands strict feasibility.
    pub lmi_tolerance: f64,
}

#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Detector(FdModel),
    Loop(LoopModel),
}

impl Model {
    pub fn name(&self) -> &str {
        match self {
            Model::Detector(m) => &m.name,
            Model::Loop(m) => &m.name,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Nominal,
    Faulty,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Nominal, Mode::Faulty];

    pub fn label(self) -> &'static str {
        match self {
            Mode::Nominal => "nominal",
            Mode::Faulty => "faulty",
        }
    }
}

/// Closed loop over `x̃ = [x; x_c]` driven by `y_c`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClosedLoop {
    pub a: Matrix,
    pub b: Matrix,
    /// `u = K x̃`.
    pub u_map: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DerivedSystems {
    pub closed_nominal: ClosedLoop,
    pub closed_faulty: ClosedLoop,
    /// `Â = A - LC`.
    pub a_hat: Matrix,
    /// `B̂ = [B  LC]`, acting on `û = [u; x]`.
    pub b_hat: Matrix,
    /// `B̃ = LC`.
    pub b_tilde: Matrix,
    /// `E = B(I - X)`.
    pub e: Matrix,
}

impl DerivedSystems {
    pub fn closed(&self, mode: Mode) -> &ClosedLoop {
        match mode {
            Mode::Nominal => &self.closed_nominal,
            Mode::Faulty => &self.closed_faulty,
        }
    }
}

/// Zero-order-hold discretization through the exponential of
/// `[[A, B], [0, 0]] dt`.
pub fn discretize_zoh(sys: &LtiContinuous, dt: f64) -> Result<LtiDiscrete, ModelError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(ModelError::Invalid(format!(
            "sample time {dt} must be positive"
        )));
    }
    let n = sys.a.rows();
    let m = sys.b.cols();
    let mut aug = Matrix::zeros(n + m, n + m);
    aug.set_block(0, 0, &sys.a.scale(dt));
    aug.set_block(0, n, &sys.b.scale(dt));
    let ex = mat_exp(&aug)?;
    Ok(LtiDiscrete {
        a: ex.submatrix(0, 0, n, n),
        b: ex.submatrix(0, n, n, m),
        c: sys.c.clone(),
        dt,
    })
}

/// Linearized 3-DOF helicopter: states are (elevation, pitch, travel) and
/// their rates, inputs are the two rotor voltages, outputs the three angles.
pub fn build_plant_matrices(p: &PhysicalParams) -> Result<LtiContinuous, ModelError> {
    let named = [
        ("m_f", p.m_f),
        ("m_w", p.m_w),
        ("L_a", p.l_a),
        ("L_h", p.l_h),
        ("L_m", p.l_m),
        ("L_w", p.l_w),
        ("L_f", p.l_f),
        ("K_f", p.k_f),
        ("g", p.g),
    ];
    for (name, v) in named {
        if !(v > 0.0) || !v.is_finite() {
            return Err(ModelError::Invalid(format!(
                "parameter {name} = {v} must be positive"
            )));
        }
    }
    let mut a = Matrix::zeros(6, 6);
    a[(0, 3)] = 1.0;
    a[(1, 4)] = 1.0;
    a[(2, 5)] = 1.0;
    a[(5, 1)] = (2.0 * p.m_f * p.l_a - p.m_w * p.l_m) * p.g
        / (2.0 * p.m_f * p.l_a * p.l_a + 2.0 * p.m_f * p.l_h * p.l_h + p.m_w * p.l_m * p.l_m);
    let mut b = Matrix::zeros(6, 2);
    let elev = p.l_a * p.k_f / (p.m_w * p.l_w * p.l_w + 2.0 * p.m_f * p.l_a * p.l_a);
    let pitch = p.k_f / (2.0 * p.m_f * p.l_f);
    b[(3, 0)] = elev;
    b[(3, 1)] = elev;
    b[(4, 0)] = pitch;
    b[(4, 1)] = -pitch;
    let mut c = Matrix::zeros(3, 6);
    for i in 0..3 {
        c[(i, i)] = 1.0;
    }
    LtiContinuous::new(a, b, c)
}

/// `E = B (I - X)`.
pub fn build_fault_input(plant: &LtiDiscrete, fault: &FaultModel) -> Result<Matrix, ModelError> {
    let m = plant.input_dim();
    if fault.x.shape() != (m, m) {
        return Err(ModelError::Invalid(format!(
            "fault matrix X is {:?}, expected {m}x{m}",
            fault.x.shape()
        )));
    }
    Ok(plant.b.matmul(&(&Matrix::identity(m) - &fault.x))?)
}

/// `[B, AB, …, A^{n-1}B]`.
pub fn controllability_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix, ModelError> {
    let mut blocks = vec![b.clone()];
    for _ in 1..a.rows() {
        let next = a.matmul(blocks.last().expect("nonempty"))?;
        blocks.push(next);
    }
    let refs: Vec<&Matrix> = blocks.iter().collect();
    Ok(Matrix::hstack(&refs)?)
}

pub fn is_controllable(a: &Matrix, b: &Matrix) -> Result<bool, ModelError> {
    Ok(rank(&controllability_matrix(a, b)?, 1e-10)? == a.rows())
}

pub fn is_observable(a: &Matrix, c: &Matrix) -> Result<bool, ModelError> {
    is_controllable(&a.transpose(), &c.transpose())
}

impl FdModel {
    /// Checks the dimension and range invariants of the model.
    pub fn validate(&self) -> Result<(), ModelError> {
        let p = &self.plant;
        check_lti_dims(&p.a, &p.b, &p.c)?;
        let (n, m, q) = (p.state_dim(), p.input_dim(), p.output_dim());
        if !(self.dt > 0.0) {
            return Err(ModelError::Invalid(format!(
                "dt = {} must be positive",
                self.dt
            )));
        }
        let k = &self.controller;
        let nc = k.a.rows();
        let r = k.b_r.cols();
        let shapes_ok = k.a.is_square()
            && k.b_y.shape() == (nc, q)
            && k.b_r.rows() == nc
            && k.c.shape() == (m, nc)
            && k.d.shape() == (m, q);
        if !shapes_ok {
            return Err(ModelError::Invalid(format!(
                "controller dimensions do not match a plant with {n} states, {m} inputs, {q} outputs"
            )));
        }
        if self.observer_gain.shape() != (n, q) {
            return Err(ModelError::Invalid(format!(
                "observer gain is {:?}, expected {n}x{q}",
                self.observer_gain.shape()
            )));
        }
        if self.reference_shape.dim() != r {
            return Err(ModelError::Invalid(format!(
                "reference bound has dimension {}, controller takes {r} references",
                self.reference_shape.dim()
            )));
        }
        if self.fault.x.shape() != (m, m) {
            return Err(ModelError::Invalid(format!(
                "fault matrix X must be {m}x{m}"
            )));
        }
        for i in 0..m {
            let d = self.fault.x[(i, i)];
            if !(0.0..=1.0).contains(&d) {
                return Err(ModelError::Invalid(format!(
                    "actuator effectiveness X[{i},{i}] = {d} outside [0, 1]"
                )));
            }
        }
        if !(self.fault.sigma > 0.0) {
            return Err(ModelError::Invalid(
                "fault bound sigma must be positive".into(),
            ));
        }
        if !(self.initial_error_radius >= 0.0) {
            return Err(ModelError::Invalid(
                "initial_error_radius must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Plant input matrix seen by the actuators in the given mode.
    pub fn actuated_b(&self, mode: Mode) -> Matrix {
        match mode {
            Mode::Nominal => self.plant.b.clone(),
            Mode::Faulty => &self.plant.b * &self.fault.x,
        }
    }
}

/// Builds the derived systems and checks that the observer is stable.
pub fn assemble(model: &FdModel) -> Result<DerivedSystems, ModelError> {
    model.validate()?;
    let p = &model.plant;
    let k = &model.controller;
    let (n, nc) = (p.state_dim(), k.state_dim());
    let lc = &model.observer_gain * &p.c;
    let a_hat = &p.a - &lc;
    let rho = spectral_radius(&a_hat)?;
    if !(rho < 1.0) {
        return Err(ModelError::UnstableObserver(rho));
    }
    let u_map = Matrix::hstack(&[&(&k.d * &p.c), &k.c])?;
    let closed = |mode: Mode| -> Result<ClosedLoop, ModelError> {
        let bx = model.actuated_b(mode);
        let mut a = Matrix::zeros(n + nc, n + nc);
        a.set_block(0, 0, &(&p.a + &(&bx * &(&k.d * &p.c))));
        a.set_block(0, n, &(&bx * &k.c));
        a.set_block(n, 0, &(&k.b_y * &p.c));
        a.set_block(n, n, &k.a);
        let mut b = Matrix::zeros(n + nc, k.reference_dim());
        b.set_block(n, 0, &k.b_r);
        Ok(ClosedLoop {
            a,
            b,
            u_map: u_map.clone(),
        })
    };
    Ok(DerivedSystems {
        closed_nominal: closed(Mode::Nominal)?,
        closed_faulty: closed(Mode::Faulty)?,
        b_hat: Matrix::hstack(&[&p.b, &lc])?,
        b_tilde: lc,
        e: build_fault_input(p, &model.fault)?,
        a_hat,
    })
}

/// Observer update in innovation form `x̂⁺ = A x̂ + B u + L (y - C x̂)`.
pub fn observer_step_innovation(m: &FdModel, xhat: &[f64], u: &[f64], y: &[f64]) -> Vec<f64> {
    let p = &m.plant;
    let yhat = p.c.mul_vec(xhat).expect("dims");
    let innov: Vec<f64> = y.iter().zip(&yhat).map(|(a, b)| a - b).collect();
    add3(
        &p.a.mul_vec(xhat).expect("dims"),
        &p.b.mul_vec(u).expect("dims"),
        &m.observer_gain.mul_vec(&innov).expect("dims"),
    )
}

/// `x̂⁺ = Â x̂ + B u + L y`.
pub fn observer_step_split(
    d: &DerivedSystems,
    m: &FdModel,
    xhat: &[f64],
    u: &[f64],
    y: &[f64],
) -> Vec<f64> {
    add3(
        &d.a_hat.mul_vec(xhat).expect("dims"),
        &m.plant.b.mul_vec(u).expect("dims"),
        &m.observer_gain.mul_vec(y).expect("dims"),
    )
}

/// `x̂⁺ = Â x̂ + B̂ [u; x]`.
pub fn observer_step_stacked(d: &DerivedSystems, xhat: &[f64], u: &[f64], x: &[f64]) -> Vec<f64> {
    let uhat: Vec<f64> = u.iter().chain(x).copied().collect();
    let a = d.a_hat.mul_vec(xhat).expect("dims");
    let b = d.b_hat.mul_vec(&uhat).expect("dims");
    a.iter().zip(&b).map(|(p, q)| p + q).collect()
}

fn add3(a: &[f64], b: &[f64], c: &[f64]) -> Vec<f64> {
    a.iter()
        .zip(b)
        .zip(c)
        .map(|((x, y), z)| x + y + z)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

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

    #[test]
    fn zoh_examples() {
        let sys = LtiContinuous::new(
            Matrix::zeros(2, 2),
            Matrix::identity(2),
            Matrix::identity(2),
        )
        .unwrap();
        let d = discretize_zoh(&sys, 0.01).unwrap();
        assert_eq!(d.a, Matrix::identity(2));
        assert!((&d.b - &Matrix::identity(2).scale(0.01)).max_abs() < 1e-17);

        let sys = LtiContinuous::new(
            Matrix::from_diag(&[-1.0]),
            Matrix::from_diag(&[1.0]),
            Matrix::from_diag(&[1.0]),
        )
        .unwrap();
        let d = discretize_zoh(&sys, 1.0).unwrap();
        let em1 = (-1.0f64).exp();
        assert!((d.a[(0, 0)] - em1).abs() < 1e-15);
        assert!((d.b[(0, 0)] - (1.0 - em1)).abs() < 1e-15);
        assert!(discretize_zoh(&sys, 0.0).is_err());
    }

    #[test]
    fn helicopter_zoh_matches_terminating_series() {
        let sys = build_plant_matrices(&params()).unwrap();
        let dt = 0.01;
        let d = discretize_zoh(&sys, dt).unwrap();
        // A is nilpotent (A^4 = 0: rate -> pitch -> travel rate -> travel), so
        // the exponential and the input integral are finite sums.
        let a = &sys.a;
        let mut powers = vec![Matrix::identity(6)];
        for k in 1..5 {
            powers.push(&powers[k - 1] * a);
        }
        assert_eq!(powers[4].max_abs(), 0.0);
        assert!(powers[3].max_abs() > 0.0);
        let mut ad = Matrix::zeros(6, 6);
        let mut int = Matrix::zeros(6, 6);
        let mut fact = 1.0;
        for (k, ak) in powers.iter().enumerate().take(4) {
            if k > 0 {
                fact *= k as f64;
            }
            ad = &ad + &ak.scale(dt.powi(k as i32) / fact);
            int = &int + &ak.scale(dt.powi(k as i32 + 1) / (fact * (k as f64 + 1.0)));
        }
        let bd = &int * &sys.b;
        assert!((&d.a - &ad).max_abs() < 1e-15);
        assert!((&d.b - &bd).max_abs() < 1e-15);
    }

    #[test]
    fn helicopter_structure() {
        let p = params();
        let sys = build_plant_matrices(&p).unwrap();
        let mut want_c = Matrix::zeros(3, 6);
        for i in 0..3 {
            want_c[(i, i)] = 1.0;
        }
        assert_eq!(sys.c, want_c);
        for i in 0..6 {
            for j in 0..6 {
                let v = sys.a[(i, j)];
                match (i, j) {
                    (0, 3) | (1, 4) | (2, 5) => assert_eq!(v, 1.0),
                    (5, 1) => assert!(v != 0.0),
                    _ => assert_eq!(v, 0.0),
                }
            }
        }
        let num = (2.0 * p.m_f * p.l_a - p.m_w * p.l_m) * p.g;
        let den = 2.0 * p.m_f * p.l_a.powi(2) + 2.0 * p.m_f * p.l_h.powi(2) + p.m_w * p.l_m.powi(2);
        assert_eq!(sys.a[(5, 1)], num / den);
        for i in [0, 1, 2, 5] {
            assert_eq!(sys.b.row(i), &[0.0, 0.0]);
        }
        assert_eq!(sys.b[(4, 0)], -sys.b[(4, 1)]);
        assert_eq!(sys.b[(3, 0)], sys.b[(3, 1)]);

        let mut bad = p;
        bad.l_h = 0.0;
        assert!(build_plant_matrices(&bad).is_err());
    }

    #[test]
    fn helicopter_is_controllable_and_observable() {
        let d = discretize_zoh(&build_plant_matrices(&params()).unwrap(), 0.01).unwrap();
        assert!(is_controllable(&d.a, &d.b).unwrap());
        assert!(is_observable(&d.a, &d.c).unwrap());
        // a single output channel (travel only) cannot see elevation
        let travel = d.c.submatrix(2, 0, 1, 6);
        assert!(!is_observable(&d.a, &travel).unwrap());
    }

    #[test]
    fn fault_input_examples() {
        let d = discretize_zoh(&build_plant_matrices(&params()).unwrap(), 0.01).unwrap();
        let e = |x: Matrix| build_fault_input(&d, &FaultModel { x, sigma: 1.0 }).unwrap();
        assert_eq!(e(Matrix::identity(2)).max_abs(), 0.0);
        assert_eq!(e(Matrix::zeros(2, 2)), d.b);
        assert!((&e(Matrix::identity(2).scale(0.5)) - &d.b.scale(0.5)).max_abs() < 1e-18);
        assert!(build_fault_input(
            &d,
            &FaultModel {
                x: Matrix::identity(3),
                sigma: 1.0
            }
        )
        .is_err());
    }
}
