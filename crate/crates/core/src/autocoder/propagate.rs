//! Forward propagation of the loop-head ellipsoids through the body.

use std::collections::HashMap;

use super::{AutocodeError, Certificates, IrProgram, Statement, WeightValues};
use crate::ellipsoid::{affine_image, inclusion_margin, weighted_stack, EllipsoidQ};
use crate::model::Mode;
use crate::numerics::{inverse_spd, max_eigenvalue, Matrix};
use crate::sidecar::{Alias, Derived, Multipliers, Obligation, PreCondition, Sidecar, Tactic};

/// Back-edge inclusions looser than this, relative to the shapes' scale,
/// abort code generation.
const CLOSING_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct ObligationSet {
    pub sidecar: Sidecar,
    /// For each statement, the index of its obligation in each behavior.
    pub by_statement: Vec<Vec<(Option<Mode>, usize)>>,
    /// Back-edge obligations: behavior, head fact index, obligation index.
    pub closing: Vec<(Option<Mode>, usize, usize)>,
    /// Loop-head facts per behavior, in the order of `IrProgram::head`.
    pub head: Vec<(Option<Mode>, Vec<EllipsoidQ>)>,
    /// Nominal error set guarding the alarm, with its derived obligation id.
    pub alarm_guard: Option<(u32, EllipsoidQ)>,
}

struct Fact {
    name: &'static str,
    set: EllipsoidQ,
    valid: bool,
}

fn aliases(ir: &IrProgram, stmt: &Statement, mode: Option<Mode>) -> Vec<Alias> {
    let Some(rule) = &stmt.alias else {
        return vec![];
    };
    let prefix = format!("{}[", rule.input);
    stmt.assign_for(mode)
        .in_vars
        .iter()
        .filter_map(|v| {
            v.strip_prefix(&prefix).map(|rest| Alias {
                var: v.clone(),
                equals: ir.qualify(&format!("{}[{rest}", rule.ghost), mode),
            })
        })
        .collect()
}

/// Linear map from the stacked pre variables to the post variables.
fn post_map(
    label: &str,
    out_vars: &[String],
    in_vars: &[String],
    t: &Matrix,
    stacked: &[String],
    post_vars: &[String],
) -> Result<Matrix, AutocodeError> {
    let err = |msg: String| AutocodeError::Statement {
        label: label.to_string(),
        msg,
    };
    let col = |v: &str| stacked.iter().position(|s| s == v);
    let mut m = Matrix::zeros(post_vars.len(), stacked.len());
    for (r, pv) in post_vars.iter().enumerate() {
        if let Some(i) = out_vars.iter().position(|o| o == pv) {
            for (j, iv) in in_vars.iter().enumerate() {
                let c = col(iv).ok_or_else(|| err(format!("input `{iv}` has no pre-condition")))?;
                m[(r, c)] += t[(i, j)];
            }
        } else {
            let c = col(pv).ok_or_else(|| err(format!("post variable `{pv}` is unconstrained")))?;
            m[(r, c)] = 1.0;
        }
    }
    Ok(m)
}

/// Emits one obligation per statement and behavior, one per inductive
/// loop-head fact at the back edge, and the derived threshold claim.
pub fn propagate(ir: &IrProgram, certs: &Certificates) -> Result<ObligationSet, AutocodeError> {
    let keys = ir.behavior_keys();
    let mut sidecar = Sidecar::new(&ir.name);
    let mut facts: HashMap<Option<Mode>, Vec<Fact>> = HashMap::new();
    let mut head = Vec::new();
    for &mode in &keys {
        let mut sets = Vec::new();
        for h in &ir.head {
            let q = certs.head_shape(h.name, mode)?;
            sets.push(EllipsoidQ::new(q, ir.qualify_all(&h.vars, mode))?);
        }
        facts.insert(
            mode,
            ir.head
                .iter()
                .zip(&sets)
                .map(|(h, s)| Fact {
                    name: h.name,
                    set: s.clone(),
                    valid: true,
                })
                .collect(),
        );
        head.push((mode, sets));
    }

    let mut by_statement = Vec::new();
    for stmt in &ir.body {
        let mut ids = Vec::new();
        for &mode in &keys {
            let fs = facts
                .get_mut(&mode)
                .expect("facts exist for every behavior");
            let assign = stmt.assign_for(mode);
            let mut pre = Vec::new();
            for name in &stmt.plan.pre {
                let f = fs.iter().rev().find(|f| f.name == *name).ok_or_else(|| {
                    AutocodeError::Statement {
                        label: stmt.label().into(),
                        msg: format!("no fact `{name}`"),
                    }
                })?;
                if !f.valid {
                    return Err(AutocodeError::Statement {
                        label: stmt.label().into(),
                        msg: format!("fact `{name}` was invalidated by an earlier assignment"),
                    });
                }
                pre.push(f.set.clone());
            }
            let weights = certs.weights(stmt.plan.weights, mode)?;
            let stacked = match &weights {
                WeightValues::None => {
                    if pre.len() != 1 {
                        return Err(AutocodeError::Statement {
                            label: stmt.label().into(),
                            msg: "an exact image needs exactly one pre-condition".into(),
                        });
                    }
                    pre[0].clone()
                }
                WeightValues::Fixed(w) => {
                    let parts: Vec<(&EllipsoidQ, f64)> =
                        pre.iter().zip(w.iter().copied()).collect();
                    weighted_stack(&parts)?
                }
                WeightValues::Certificate(c) => {
                    let (a, b) = c.weights();
                    weighted_stack(&[(&pre[0], a), (&pre[1], b)])?
                }
            };
            let alias = aliases(ir, stmt, mode);
            let in_vars: Vec<String> = assign
                .in_vars
                .iter()
                .map(|v| {
                    alias
                        .iter()
                        .find(|a| &a.var == v)
                        .map_or(v.clone(), |a| a.equals.clone())
                })
                .collect();
            let post_vars = ir.qualify_all(&stmt.plan.post_vars, mode);
            let map = post_map(
                stmt.label(),
                &assign.out_vars,
                &in_vars,
                &assign.t,
                &stacked.vars,
                &post_vars,
            )?;
            let image = affine_image(&stacked, &map, post_vars.clone())?;
            for f in fs.iter_mut() {
                if f.set.vars.iter().any(|v| assign.out_vars.contains(v)) {
                    f.valid = false;
                }
            }
            fs.push(Fact {
                name: stmt.plan.post,
                set: image.clone(),
                valid: true,
            });
            let (tactic, wts, cert) = match weights {
                WeightValues::None => (Tactic::AffineEllipsoid, None, None),
                WeightValues::Fixed(w) => (Tactic::SProcedure, Some(w), None),
                WeightValues::Certificate(c) => (
                    Tactic::SProcedure,
                    None,
                    Some(Multipliers {
                        alpha: c.alpha,
                        gamma: c.gamma,
                    }),
                ),
            };
            ids.push((mode, sidecar.obligations.len()));
            sidecar.obligations.push(Obligation {
                id: sidecar.obligations.len() as u32 + 1,
                label: stmt.label().into(),
                behavior: mode.map(|m| m.label().to_string()),
                tactic,
                in_vars: assign.in_vars.clone(),
                out_vars: assign.out_vars.clone(),
                t: assign.t.clone(),
                b: assign.b.clone(),
                assumptions: alias,
                weights: wts,
                certificate: cert,
                post_vars,
                q_post: image.q.as_matrix().clone(),
                pre: pre
                    .iter()
                    .map(|e| PreCondition {
                        vars: e.vars.clone(),
                        q: e.q.as_matrix().clone(),
                    })
                    .collect(),
            });
        }
        by_statement.push(ids);
    }

    let mut closing = Vec::new();
    for (mode, sets) in &head {
        let fs = &facts[mode];
        for (hi, h) in ir.head.iter().enumerate() {
            if !h.inductive {
                continue;
            }
            let next = format!("{}_next", h.name);
            let last = fs
                .iter()
                .rev()
                .find(|f| f.name == next && f.valid)
                .ok_or_else(|| AutocodeError::Statement {
                    label: "back_edge".into(),
                    msg: format!("nothing re-establishes `{}`", h.name),
                })?;
            let target = &sets[hi];
            let scale = max_eigenvalue(&last.set.q)?.max(max_eigenvalue(&target.q)?);
            let margin = inclusion_margin(&last.set, target)? / scale;
            if margin < -CLOSING_TOL {
                return Err(AutocodeError::NotInductive {
                    fact: h.name.into(),
                    behavior: mode.map_or("the program".into(), |m| m.label().to_string()),
                    margin,
                });
            }
            let vars = target.vars.clone();
            closing.push((*mode, hi, sidecar.obligations.len()));
            sidecar.obligations.push(Obligation {
                id: sidecar.obligations.len() as u32 + 1,
                label: format!("back_edge_{}", h.name),
                behavior: mode.map(|m| m.label().to_string()),
                tactic: Tactic::AffineEllipsoid,
                in_vars: vars.clone(),
                out_vars: vars.clone(),
                t: Matrix::identity(vars.len()),
                b: vec![0.0; vars.len()],
                assumptions: vec![],
                weights: None,
                certificate: None,
                post_vars: vars.clone(),
                q_post: target.q.as_matrix().clone(),
                pre: vec![PreCondition {
                    vars,
                    q: last.set.q.as_matrix().clone(),
                }],
            });
        }
    }

    let mut alarm_guard = None;
    if let (Some(alarm), Certificates::Detector { model, bundle }) = (&ir.alarm, certs) {
        let d = &bundle.detector;
        let mode = Some(Mode::Nominal);
        let vars = ir.qualify_all(&crate::ellipsoid::var_names("error", d.p.dim()), mode);
        let id = sidecar.obligations.len() as u32 + 1;
        sidecar.derived.push(Derived {
            id,
            kind: "residual_threshold".into(),
            behavior: mode.map(|m| m.label().to_string()),
            vars: vars.clone(),
            p: d.p.as_matrix().clone(),
            level: d.zeta,
            c: model.plant.c.clone(),
            r_th: alarm.r_th,
        });
        let q = inverse_spd(&d.p)?.scale(d.zeta);
        alarm_guard = Some((id, EllipsoidQ::new(q, vars)?));
    }

    Ok(ObligationSet {
        sidecar,
        by_statement,
        closing,
        head,
        alarm_guard,
    })
}
