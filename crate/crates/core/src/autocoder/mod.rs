//! Credible autocoder: lowers a model to straight-line affine statements,
//! pushes the loop-head ellipsoids through every statement and emits C with
//! ACSL-style contracts next to a proof-obligation sidecar.

mod emit;
mod propagate;

pub use emit::{emit_c_acsl, AnnotatedSource};
pub use propagate::{propagate, ObligationSet};

use thiserror::Error;

use crate::ellipsoid::{var_names, EllipsoidError};
use crate::model::{assemble, FdModel, LoopModel, Mode, ModelError};
use crate::numerics::{inverse_spd, Matrix, NumericsError, SymMatrix};
use crate::synthesis::{Bundle, CertificateBundle, LoopBundle};

#[derive(Debug, Error)]
pub enum AutocodeError {
    #[error("loop-head invariant `{fact}` is not inductive for {behavior}: margin {margin:e}")]
    NotInductive {
        fact: String,
        behavior: String,
        margin: f64,
    },
    #[error("statement {label}: {msg}")]
    Statement { label: String, msg: String },
    #[error("bundle does not match the model: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ellipsoid(#[from] EllipsoidError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// A C variable: scalar when `len` is `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct Decl {
    pub name: String,
    pub len: Option<usize>,
}

impl Decl {
    fn array(name: &str, len: usize) -> Self {
        Self {
            name: name.into(),
            len: Some(len),
        }
    }

    fn scalar(name: &str) -> Self {
        Self {
            name: name.into(),
            len: None,
        }
    }

    pub fn vars(&self) -> Vec<String> {
        match self.len {
            Some(n) => var_names(&self.name, n),
            None => vec![self.name.clone()],
        }
    }

    pub fn c_type(&self) -> String {
        match self.len {
            Some(n) => format!("double {}[{n}]", self.name),
            None => format!("double {}", self.name),
        }
    }
}

/// `out_vars := T in_vars + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Assign {
    pub out_vars: Vec<String>,
    pub in_vars: Vec<String>,
    pub t: Matrix,
    pub b: Vec<f64>,
}

impl Assign {
    fn new(out_vars: Vec<String>, in_vars: Vec<String>, t: Matrix) -> Self {
        debug_assert_eq!(t.shape(), (out_vars.len(), in_vars.len()));
        let b = vec![0.0; out_vars.len()];
        Self {
            out_vars,
            in_vars,
            t,
            b,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    ErrorState,
    PlantOutput,
    ReadOutput,
    Control,
    Residual,
    ObserverUpdate,
    ControllerUpdate,
    PlantUpdate,
    ReadInput,
    StateUpdate,
}

impl Role {
    pub fn label(self) -> &'static str {
        match self {
            Role::ErrorState => "error_state",
            Role::PlantOutput => "plant_output",
            Role::ReadOutput => "read_output",
            Role::Control => "control_law",
            Role::Residual => "residual",
            Role::ObserverUpdate => "observer_update",
            Role::ControllerUpdate => "controller_update",
            Role::PlantUpdate => "plant_update",
            Role::ReadInput => "read_input",
            Role::StateUpdate => "state_update",
        }
    }
}

/// Which multipliers weigh the pre-conditions of an S-procedure step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Weights {
    /// Single pre-condition, exact image.
    None,
    /// `(gamma, 1 - alpha - gamma)` from the error-state certificate.
    ErrorCertificate,
    /// `(1 - alpha, alpha)` with the observer's `alpha`.
    Observer,
    /// `(1 - alpha, alpha)` with the closed loop's `alpha`.
    ClosedLoop,
    /// `(1 - alpha, alpha)` with the loop invariant's `alpha`.
    Loop,
}

/// How a statement is proved: named facts in, a named fact out.
#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub pre: Vec<&'static str>,
    pub weights: Weights,
    pub post: &'static str,
    /// Post-condition variables, behavior-generic.
    pub post_vars: Vec<String>,
}

/// `var[i]` of an input array is read as `ghost[i]` of the behavior.
#[derive(Clone, Debug, PartialEq)]
pub struct AliasRule {
    pub input: String,
    pub ghost: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Statement {
    pub role: Role,
    pub ghost: bool,
    /// One assignment per behavior for ghost code, a single one otherwise.
    pub code: Vec<(Option<Mode>, Assign)>,
    pub alias: Option<AliasRule>,
    pub plan: Plan,
}

impl Statement {
    pub fn label(&self) -> &'static str {
        self.role.label()
    }

    pub fn assign_for(&self, mode: Option<Mode>) -> &Assign {
        self.code
            .iter()
            .find(|(m, _)| m.is_none() || *m == mode)
            .map(|(_, a)| a)
            .expect("every statement has code for each behavior")
    }
}

/// Loop-head facts and input assumptions, behavior-generic names.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadFact {
    pub name: &'static str,
    pub vars: Vec<String>,
    /// Checked again by a closing obligation at the back edge.
    pub inductive: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Alarm {
    pub residual: Vec<String>,
    pub r_th: f64,
}

/// Straight-line body of the single outer `while (1)` loop.
#[derive(Clone, Debug, PartialEq)]
pub struct IrProgram {
    pub name: String,
    pub behaviors: Vec<Mode>,
    pub inputs: Vec<Decl>,
    pub state: Vec<Decl>,
    pub signals: Vec<Decl>,
    /// Behavior-generic ghost arrays; each behavior gets its own copy.
    pub ghosts: Vec<Decl>,
    /// Values handed back to the environment after each step.
    pub outputs: Vec<Decl>,
    pub head: Vec<HeadFact>,
    pub body: Vec<Statement>,
    pub alarm: Option<Alarm>,
}

impl IrProgram {
    /// Behaviors to annotate; `None` for a single-behavior program.
    pub fn behavior_keys(&self) -> Vec<Option<Mode>> {
        if self.behaviors.is_empty() {
            vec![None]
        } else {
            self.behaviors.iter().map(|&m| Some(m)).collect()
        }
    }

    /// Prefixes ghost names with the behavior: `state[2]` → `faulty_state[2]`.
    pub fn qualify(&self, var: &str, mode: Option<Mode>) -> String {
        let Some(mode) = mode else {
            return var.to_string();
        };
        let base = var.split('[').next().unwrap_or(var);
        if self.ghosts.iter().any(|g| g.name == base) {
            format!("{}_{var}", mode.label())
        } else {
            var.to_string()
        }
    }

    pub fn qualify_all(&self, vars: &[String], mode: Option<Mode>) -> Vec<String> {
        vars.iter().map(|v| self.qualify(v, mode)).collect()
    }
}

fn ghost_vars(base: &str, n: usize, mode: Mode) -> Vec<String> {
    var_names(&format!("{}_{base}", mode.label()), n)
}

fn cat(parts: &[&[String]]) -> Vec<String> {
    parts.iter().flat_map(|p| p.iter().cloned()).collect()
}

/// Lowers the detector: error definition, sensor read, control law,
/// residual, observer and controller updates and the ghost plant.
pub fn lower_detector(
    model: &FdModel,
    bundle: &CertificateBundle,
) -> Result<IrProgram, AutocodeError> {
    let derived = assemble(model)?;
    let p = &model.plant;
    let k = &model.controller;
    let (n, m, q) = (p.state_dim(), p.input_dim(), p.output_dim());
    let (nc, nr) = (k.state_dim(), k.reference_dim());
    if bundle.nominal.closed_loop.dim() != n + nc || bundle.nominal.observer.dim() != n {
        return Err(AutocodeError::Mismatch(format!(
            "bundle `{}` has invariants of dimension {} and {}, model `{}` needs {} and {n}",
            bundle.model,
            bundle.nominal.closed_loop.dim(),
            bundle.nominal.observer.dim(),
            model.name,
            n + nc
        )));
    }
    let state = var_names("state", n);
    let output = var_names("output", q);
    let error = var_names("error", n);
    let x_c = var_names("x_c", nc);
    let xhat = var_names("xhat", n);
    let y = var_names("y", q);
    let u = var_names("u", m);
    let r = var_names("r", q);
    let io_y = var_names("io_y", q);
    let io_yc = var_names("io_yc", nr);
    let ident = |d: usize| Matrix::identity(d);
    let hs = |blocks: &[&Matrix]| Matrix::hstack(blocks).expect("row counts agree");

    let ghost_per_mode = |f: &dyn Fn(Mode) -> Assign| -> Vec<(Option<Mode>, Assign)> {
        Mode::ALL.iter().map(|&md| (Some(md), f(md))).collect()
    };

    let body = vec![
        Statement {
            role: Role::ErrorState,
            ghost: true,
            code: ghost_per_mode(&|md| {
                Assign::new(
                    ghost_vars("error", n, md),
                    cat(&[&ghost_vars("state", n, md), &xhat]),
                    hs(&[&ident(n), &ident(n).scale(-1.0)]),
                )
            }),
            alias: None,
            plan: Plan {
                pre: vec!["closed_loop", "observer"],
                weights: Weights::ErrorCertificate,
                post: "error",
                post_vars: error.clone(),
            },
        },
        Statement {
            role: Role::PlantOutput,
            ghost: true,
            code: ghost_per_mode(&|md| {
                Assign::new(
                    ghost_vars("output", q, md),
                    ghost_vars("state", n, md),
                    p.c.clone(),
                )
            }),
            alias: None,
            plan: Plan {
                pre: vec!["closed_loop"],
                weights: Weights::None,
                post: "with_output",
                post_vars: cat(&[&state, &x_c, &output]),
            },
        },
        Statement {
            role: Role::ReadOutput,
            ghost: false,
            code: vec![(None, Assign::new(y.clone(), io_y.clone(), ident(q)))],
            alias: Some(AliasRule {
                input: "io_y".into(),
                ghost: "output".into(),
            }),
            plan: Plan {
                pre: vec!["with_output"],
                weights: Weights::None,
                post: "with_read",
                post_vars: cat(&[&state, &x_c, &y]),
            },
        },
        Statement {
            role: Role::Control,
            ghost: false,
            code: vec![(
                None,
                Assign::new(u.clone(), cat(&[&x_c, &y]), hs(&[&k.c, &k.d])),
            )],
            alias: None,
            plan: Plan {
                pre: vec!["with_read"],
                weights: Weights::None,
                post: "with_control",
                post_vars: cat(&[&state, &x_c, &y, &u]),
            },
        },
        Statement {
            role: Role::Residual,
            ghost: false,
            code: vec![(
                None,
                Assign::new(
                    r.clone(),
                    cat(&[&y, &xhat]),
                    hs(&[&ident(q), &p.c.scale(-1.0)]),
                ),
            )],
            alias: None,
            plan: Plan {
                pre: vec!["observer", "with_control"],
                weights: Weights::Observer,
                post: "residual",
                post_vars: r.clone(),
            },
        },
        Statement {
            role: Role::ObserverUpdate,
            ghost: false,
            code: vec![(
                None,
                Assign::new(
                    xhat.clone(),
                    cat(&[&xhat, &u, &y]),
                    hs(&[&derived.a_hat, &p.b, &model.observer_gain]),
                ),
            )],
            alias: None,
            plan: Plan {
                pre: vec!["observer", "with_control"],
                weights: Weights::Observer,
                post: "observer_next",
                post_vars: xhat.clone(),
            },
        },
        Statement {
            role: Role::ControllerUpdate,
            ghost: false,
            code: vec![(
                None,
                Assign::new(
                    x_c.clone(),
                    cat(&[&x_c, &y, &io_yc]),
                    hs(&[&k.a, &k.b_y, &k.b_r]),
                ),
            )],
            alias: None,
            plan: Plan {
                pre: vec!["with_control", "reference"],
                weights: Weights::ClosedLoop,
                post: "controller_next",
                post_vars: cat(&[&state, &x_c, &u]),
            },
        },
        Statement {
            role: Role::PlantUpdate,
            ghost: true,
            code: ghost_per_mode(&|md| {
                let s = ghost_vars("state", n, md);
                Assign::new(
                    s.clone(),
                    cat(&[&s, &u]),
                    hs(&[&p.a, &model.actuated_b(md)]),
                )
            }),
            alias: None,
            plan: Plan {
                pre: vec!["controller_next"],
                weights: Weights::None,
                post: "closed_loop_next",
                post_vars: cat(&[&state, &x_c]),
            },
        },
    ];
    Ok(IrProgram {
        name: model.name.clone(),
        behaviors: Mode::ALL.to_vec(),
        inputs: vec![Decl::array("io_y", q), Decl::array("io_yc", nr)],
        state: vec![Decl::array("x_c", nc), Decl::array("xhat", n)],
        signals: vec![
            Decl::array("y", q),
            Decl::array("u", m),
            Decl::array("r", q),
        ],
        ghosts: vec![
            Decl::array("state", n),
            Decl::array("output", q),
            Decl::array("error", n),
        ],
        outputs: vec![Decl::array("u", m)],
        head: vec![
            HeadFact {
                name: "closed_loop",
                vars: cat(&[&state, &x_c]),
                inductive: true,
            },
            HeadFact {
                name: "observer",
                vars: xhat,
                inductive: true,
            },
            HeadFact {
                name: "reference",
                vars: io_yc,
                inductive: false,
            },
        ],
        body,
        alarm: Some(Alarm {
            residual: r,
            r_th: bundle.detector.r_th,
        }),
    })
}

/// Lowers `x := A x + B input` to an input read and the state update.
pub fn lower_loop(model: &LoopModel) -> Result<IrProgram, AutocodeError> {
    let n = model.a.rows();
    let nu = model.b.cols();
    let decl = |name: &str, len: usize| {
        if len == 1 {
            Decl::scalar(name)
        } else {
            Decl::array(name, len)
        }
    };
    let x = decl(&model.state, n);
    let input = decl(&model.input, nu);
    let io = decl(&format!("io_{}", model.input), nu);
    let (xv, iv, iov) = (x.vars(), input.vars(), io.vars());
    let body = vec![
        Statement {
            role: Role::ReadInput,
            ghost: false,
            code: vec![(
                None,
                Assign::new(iv.clone(), iov.clone(), Matrix::identity(nu)),
            )],
            alias: None,
            plan: Plan {
                pre: vec!["invariant", "input_bound"],
                weights: Weights::Loop,
                post: "with_input",
                post_vars: cat(&[&xv, &iv]),
            },
        },
        Statement {
            role: Role::StateUpdate,
            ghost: false,
            code: vec![(
                None,
                Assign::new(
                    xv.clone(),
                    cat(&[&xv, &iv]),
                    Matrix::hstack(&[&model.a, &model.b])?,
                ),
            )],
            alias: None,
            plan: Plan {
                pre: vec!["with_input"],
                weights: Weights::None,
                post: "invariant_next",
                post_vars: xv.clone(),
            },
        },
    ];
    Ok(IrProgram {
        name: model.name.clone(),
        behaviors: vec![],
        inputs: vec![io],
        state: vec![x.clone()],
        signals: vec![input],
        ghosts: vec![],
        outputs: vec![x.clone()],
        head: vec![
            HeadFact {
                name: "invariant",
                vars: xv,
                inductive: true,
            },
            HeadFact {
                name: "input_bound",
                vars: iov,
                inductive: false,
            },
        ],
        body,
        alarm: None,
    })
}

/// Certificates the propagation draws on.
#[derive(Clone, Copy, Debug)]
pub enum Certificates<'a> {
    Detector {
        model: &'a FdModel,
        bundle: &'a CertificateBundle,
    },
    Loop {
        model: &'a LoopModel,
        bundle: &'a LoopBundle,
    },
}

impl<'a> Certificates<'a> {
    /// Q-form shape of a loop-head fact in the given behavior.
    fn head_shape(&self, fact: &str, mode: Option<Mode>) -> Result<SymMatrix, AutocodeError> {
        let missing = || AutocodeError::Mismatch(format!("no certificate for `{fact}`"));
        match (self, mode) {
            (Certificates::Detector { model, bundle }, Some(md)) => {
                let mc = bundle.mode(md);
                match fact {
                    "closed_loop" => {
                        Ok(inverse_spd(&mc.closed_loop.p)?.scale(mc.closed_loop.level))
                    }
                    "observer" => Ok(inverse_spd(&mc.observer.p)?.scale(mc.observer.level)),
                    "reference" => Ok(model.reference_shape.clone()),
                    _ => Err(missing()),
                }
            }
            (Certificates::Loop { model, bundle }, None) => match fact {
                "invariant" => Ok(inverse_spd(&bundle.invariant.p)?.scale(bundle.invariant.level)),
                "input_bound" => Ok(inverse_spd(&model.input_p)?),
                _ => Err(missing()),
            },
            _ => Err(AutocodeError::Mismatch(
                "behavior does not fit the certificates".into(),
            )),
        }
    }

    fn weights(&self, w: Weights, mode: Option<Mode>) -> Result<WeightValues, AutocodeError> {
        let bad = || AutocodeError::Mismatch("weights do not fit the certificates".into());
        Ok(match (self, mode, w) {
            (_, _, Weights::None) => WeightValues::None,
            (Certificates::Detector { bundle, .. }, Some(md), rule) => {
                let mc = bundle.mode(md);
                match rule {
                    Weights::ErrorCertificate => WeightValues::Certificate(mc.sproc),
                    Weights::Observer => {
                        WeightValues::Fixed(vec![1.0 - mc.sproc.alpha, mc.sproc.alpha])
                    }
                    Weights::ClosedLoop => {
                        WeightValues::Fixed(vec![1.0 - mc.closed_loop_alpha, mc.closed_loop_alpha])
                    }
                    _ => return Err(bad()),
                }
            }
            (Certificates::Loop { bundle, .. }, None, Weights::Loop) => {
                WeightValues::Fixed(vec![1.0 - bundle.alpha, bundle.alpha])
            }
            _ => return Err(bad()),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
enum WeightValues {
    None,
    Fixed(Vec<f64>),
    Certificate(crate::ellipsoid::SProcCertificate),
}

/// Lowers whichever model the bundle belongs to.
pub fn lower(model: &crate::model::Model, bundle: &Bundle) -> Result<IrProgram, AutocodeError> {
    use crate::model::Model;
    match (model, bundle) {
        (Model::Detector(m), Bundle::Detector(b)) => lower_detector(m, b),
        (Model::Loop(m), Bundle::Loop(_)) => lower_loop(m),
        _ => Err(AutocodeError::Mismatch(
            "model and bundle are of different kinds".into(),
        )),
    }
}

/// Generated C source and sidecar text for a model and its bundle.
pub fn autocode(
    model: &crate::model::Model,
    bundle: &Bundle,
) -> Result<(AnnotatedSource, String), AutocodeError> {
    use crate::model::Model;
    let certs = match (model, bundle) {
        (Model::Detector(m), Bundle::Detector(b)) => Certificates::Detector {
            model: m,
            bundle: b,
        },
        (Model::Loop(m), Bundle::Loop(b)) => Certificates::Loop {
            model: m,
            bundle: b,
        },
        _ => {
            return Err(AutocodeError::Mismatch(
                "model and bundle are of different kinds".into(),
            ))
        }
    };
    let ir = lower(model, bundle)?;
    let set = propagate(&ir, &certs)?;
    let source = emit_c_acsl(&ir, &set);
    Ok((source, set.sidecar.emit()))
}
