//! Closed-loop simulation of the generated step function.
//!
//! The simulator runs the autocoder's own statement list, term by term in the
//! order the C expressions evaluate, so the controller, observer and alarm
//! values match the compiled C bit for bit. The plant is the ghost plant of
//! the active behavior; switching to the faulty behavior makes the actuators
//! apply `X u`.

mod export;
mod machine;
mod metrics;

pub use export::{loop_trace_csv, plot_csv, trace_csv};
pub use metrics::{
    adversarial_error_run, detection_metrics, AdversarialRun, DetectionMetrics, LoopMetrics,
    SegmentStats,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::autocoder::{lower_detector, lower_loop, AutocodeError};
use crate::ellipsoid::{var_names, EllipsoidError};
use crate::model::{FdModel, LoopModel, Mode, ModelError};
use crate::numerics::{inverse_spd, sym_sqrt, Matrix, NumericsError, SymMatrix};
use crate::synthesis::{CertificateBundle, LoopBundle};
use machine::Machine;

/// Relative slack on level-set membership tests.
pub const MEMBERSHIP_RTOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Autocode(#[from] AutocodeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ellipsoid(#[from] EllipsoidError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Reference signal `y_c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Reference {
    Zero,
    /// Independent uniform samples on `scale` times the boundary of the
    /// reference ellipsoid.
    Boundary {
        scale: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub steps: usize,
    pub seed: u64,
    pub reference: Reference,
    /// First step run with degraded actuators.
    pub fault_start: Option<usize>,
    /// Effectiveness matrix, the model's `X` when absent.
    pub fault_x: Option<Matrix>,
    /// The plant starts at rest and `x̂(0) = -e(0)` with `e(0)` uniform in
    /// the ball of radius `initial_error_scale * initial_error_radius`.
    pub initial_error_scale: f64,
}

impl Scenario {
    pub fn nominal(steps: usize, seed: u64) -> Self {
        Self {
            steps,
            seed,
            reference: Reference::Boundary { scale: 1.0 },
            fault_start: None,
            fault_x: None,
            initial_error_scale: 1.0,
        }
    }

    pub fn with_fault(mut self, start: usize) -> Self {
        self.fault_start = Some(start);
        self
    }

    pub fn validate(&self, model: &FdModel) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Scenario(m));
        if let Some(k) = self.fault_start {
            if k > self.steps {
                return bad(format!(
                    "fault_start {k} is past the last step {}",
                    self.steps
                ));
            }
        }
        if let Some(x) = &self.fault_x {
            let m = model.plant.input_dim();
            if x.shape() != (m, m) || !x.is_finite() {
                return bad(format!("fault X must be a finite {m}x{m} matrix"));
            }
        }
        if let Reference::Boundary { scale } = self.reference {
            if !(0.0..=1.0).contains(&scale) {
                return bad(format!("reference scale {scale} is outside [0, 1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.initial_error_scale) {
            return bad(format!(
                "initial error scale {} is outside [0, 1]",
                self.initial_error_scale
            ));
        }
        Ok(())
    }
}

/// One step: pre-update state, the signals computed from it, and the
/// membership of `(x, x_c)`, `x̂` and `e` in the sets of the active mode.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub step: usize,
    pub mode: Mode,
    pub y_c: Vec<f64>,
    pub x: Vec<f64>,
    pub x_c: Vec<f64>,
    pub xhat: Vec<f64>,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub r: Vec<f64>,
    pub e: Vec<f64>,
    pub r_norm: f64,
    pub alarm: bool,
    /// `‖f‖` of the fault input `f = -u` while the actuators are degraded.
    pub f_norm: f64,
    /// `eᵀ P e` with the detector `P`.
    pub v_detector: f64,
    pub in_nominal_set: bool,
    pub in_faulty_set: bool,
    /// `eᵀ P_e e` with the error invariant of the active mode.
    pub v_error: f64,
    pub in_error_set: bool,
    pub in_closed_loop: bool,
    pub in_observer: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub model: String,
    pub fault_start: Option<usize>,
    pub r_th: f64,
    pub zeta: f64,
    pub zeta_bar: f64,
    pub sigma: f64,
    pub samples: Vec<Sample>,
}

fn within(v: f64, level: f64) -> bool {
    v <= level * (1.0 + MEMBERSHIP_RTOL)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Uniform point on the boundary of `{v | vᵀ Q⁻¹ v <= 1}` given `sqrt(Q)`.
fn on_boundary(rng: &mut ChaCha8Rng, root: &SymMatrix) -> Result<Vec<f64>, SimError> {
    let n = root.dim();
    loop {
        let g: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let len = norm(&g);
        if len > 1e-12 {
            let dir: Vec<f64> = g.iter().map(|v| v / len).collect();
            return Ok(root.as_matrix().mul_vec(&dir)?);
        }
    }
}

/// Uniform point in the ball of the given radius.
fn in_ball(rng: &mut ChaCha8Rng, n: usize, radius: f64) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let len = norm(&g);
        if len > 1e-12 {
            let r = radius * rng.gen::<f64>().powf(1.0 / n as f64);
            return g.iter().map(|v| v * r / len).collect();
        }
    }
}

pub fn simulate(
    model: &FdModel,
    bundle: &CertificateBundle,
    scenario: &Scenario,
) -> Result<Trace, SimError> {
    scenario.validate(model)?;
    let mut plant_model = model.clone();
    if let Some(x) = &scenario.fault_x {
        plant_model.fault.x = x.clone();
    }
    let ir = lower_detector(&plant_model, bundle)?;
    let mut m = Machine::compile(&ir)?;
    let n = model.plant.state_dim();
    let nc = model.controller.state_dim();
    let q = model.plant.output_dim();
    let p = model.plant.input_dim();
    let nr = model.controller.reference_dim();
    let names = |base: &str, len: usize| m.slots(&var_names(base, len));
    let (x_s, xc_s, xhat_s) = (names("state", n)?, names("x_c", nc)?, names("xhat", n)?);
    let (y_s, u_s, r_s, e_s) = (
        names("y", q)?,
        names("u", p)?,
        names("r", q)?,
        names("error", n)?,
    );
    let yc_s = names("io_yc", nr)?;

    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    // plant at rest, observer off by e0: (0, 0) lies in every closed-loop set
    let e0 = in_ball(
        &mut rng,
        n,
        scenario.initial_error_scale * model.initial_error_radius,
    );
    m.write(&xhat_s, &e0.iter().map(|v| -v).collect::<Vec<_>>());
    let root = sym_sqrt(&model.reference_shape, 0.0)?;
    let alarm = ir.alarm.as_ref().expect("the detector raises an alarm");
    let limit = alarm.r_th * alarm.r_th;
    let det = &bundle.detector;

    let mut samples = Vec::with_capacity(scenario.steps);
    for k in 0..scenario.steps {
        let mode = match scenario.fault_start {
            Some(s) if k >= s => Mode::Faulty,
            _ => Mode::Nominal,
        };
        let y_c = match scenario.reference {
            Reference::Zero => vec![0.0; nr],
            Reference::Boundary { scale } => on_boundary(&mut rng, &root)?
                .iter()
                .map(|v| v * scale)
                .collect(),
        };
        m.write(&yc_s, &y_c);
        let (x, x_c, xhat) = (m.read(&x_s), m.read(&xc_s), m.read(&xhat_s));
        m.step(Some(mode));
        let (y, u, r, e) = (m.read(&y_s), m.read(&u_s), m.read(&r_s), m.read(&e_s));

        let mut sum = r[0] * r[0];
        for v in &r[1..] {
            sum += v * v;
        }
        let mc = bundle.mode(mode);
        let mut xt = x.clone();
        xt.extend_from_slice(&x_c);
        let v_detector = det.p.as_matrix().quad_form(&e)?;
        let v_error = mc.error.value(&e)?;
        samples.push(Sample {
            step: k,
            mode,
            f_norm: if mode == Mode::Faulty { norm(&u) } else { 0.0 },
            r_norm: sum.sqrt(),
            alarm: sum > limit,
            in_nominal_set: within(v_detector, det.zeta),
            in_faulty_set: within(v_detector, det.zeta_bar),
            in_error_set: within(v_error, mc.error.level),
            in_closed_loop: within(mc.closed_loop.value(&xt)?, mc.closed_loop.level),
            in_observer: within(mc.observer.value(&xhat)?, mc.observer.level),
            v_detector,
            v_error,
            y_c,
            x,
            x_c,
            xhat,
            y,
            u,
            r,
            e,
        });
    }
    Ok(Trace {
        model: model.name.clone(),
        fault_start: scenario.fault_start,
        r_th: det.r_th,
        zeta: det.zeta,
        zeta_bar: det.zeta_bar,
        sigma: model.fault.sigma,
        samples,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoopSample {
    pub step: usize,
    pub input: Vec<f64>,
    pub x: Vec<f64>,
    pub v: f64,
    pub inside: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoopTrace {
    pub model: String,
    pub state: String,
    pub input: String,
    pub level: f64,
    pub samples: Vec<LoopSample>,
}

impl LoopTrace {
    pub fn exits(&self) -> usize {
        self.samples.iter().filter(|s| !s.inside).count()
    }

    pub fn max_v(&self) -> f64 {
        self.samples.iter().map(|s| s.v).fold(0.0, f64::max)
    }
}

/// Runs a bounded-input loop from a random point on its invariant boundary
/// with inputs on the boundary of the input bound.
pub fn simulate_loop(
    model: &LoopModel,
    bundle: &LoopBundle,
    steps: usize,
    seed: u64,
) -> Result<LoopTrace, SimError> {
    let ir = lower_loop(model)?;
    let mut m = Machine::compile(&ir)?;
    let inv = &bundle.invariant;
    let x_s = m.slots(&ir.state[0].vars())?;
    let io_s = m.slots(&ir.inputs[0].vars())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x_root = sym_sqrt(&inverse_spd(&inv.p)?.scale(inv.level), 0.0)?;
    let u_root = sym_sqrt(&inverse_spd(&model.input_p)?, 0.0)?;
    let x0 = on_boundary(&mut rng, &x_root)?;
    m.write(&x_s, &x0);
    let mut samples = Vec::with_capacity(steps);
    for k in 0..steps {
        let input = on_boundary(&mut rng, &u_root)?;
        m.write(&io_s, &input);
        let x = m.read(&x_s);
        let v = inv.value(&x)?;
        m.step(None);
        samples.push(LoopSample {
            step: k,
            inside: within(v, inv.level),
            input,
            x,
            v,
        });
    }
    Ok(LoopTrace {
        model: model.name.clone(),
        state: model.state.clone(),
        input: model.input.clone(),
        level: inv.level,
        samples,
    })
}
