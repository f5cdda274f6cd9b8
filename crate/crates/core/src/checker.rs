//! Independent checker for obligation sidecars.
//!
//! Each obligation is re-derived from its own data: the pre-conditions are
//! stacked (with S-procedure weights where the tactic asks for them), pushed
//! through the assignment, and the result is compared with the claimed
//! post-condition by the eigenvalue margin `λ_min(Q_post - image)`, taken
//! relative to the larger of `λ_max(Q_post)` and `λ_max(image)` so that the
//! tolerance means the same thing for every scale of ellipsoid. Nothing
//! from the synthesis or the autocoder is consulted; only the matrix kernels
//! of [`crate::numerics`] are shared.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::numerics::{cholesky, inverse_spd, max_eigenvalue, min_eigenvalue, Matrix, SymMatrix};
use crate::sidecar::{Derived, Obligation, Sidecar, SidecarError, Tactic};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Proved,
    Failed,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verdict {
    pub id: u32,
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub behavior: Option<String>,
    pub tactic: String,
    pub status: Status,
    /// `λ_min(Q_post - image)` over the spectral scale of the two shapes, or
    /// the relative excess of `r_th` over the recomputed bound for a derived
    /// threshold. Absent when the obligation could not be evaluated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    pub message: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub model: String,
    pub tol: f64,
    pub proved: usize,
    pub failed: usize,
    pub errors: usize,
    #[serde(rename = "verdict")]
    pub verdicts: Vec<Verdict>,
}

impl Report {
    pub fn all_proved(&self) -> bool {
        self.failed == 0 && self.errors == 0
    }

    pub fn verdict(&self, id: u32) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.id == id)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("verdicts are representable in TOML")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "obligations for {} (tol {:e})", self.model, self.tol);
        for v in &self.verdicts {
            let status = match v.status {
                Status::Proved => "proved",
                Status::Failed => "FAILED",
                Status::Error => "ERROR",
            };
            let margin = v.margin.map_or("-".to_string(), |m| format!("{m:+.3e}"));
            let line = format!(
                "  {:>4}  {:<7} {:<8} {:<28} {:<16} margin {:>11}  {}",
                v.id,
                status,
                v.behavior.as_deref().unwrap_or("-"),
                v.label,
                v.tactic,
                margin,
                v.message
            );
            let _ = writeln!(out, "{}", line.trim_end());
        }
        let _ = writeln!(
            out,
            "{} checked: {} proved, {} failed, {} errors",
            self.verdicts.len(),
            self.proved,
            self.failed,
            self.errors
        );
        out
    }
}

fn verdict(o: &Obligation, result: Result<f64, String>, tol: f64) -> Verdict {
    let (status, margin, message) = match result {
        Ok(m) if m >= -tol => (Status::Proved, Some(m), String::new()),
        Ok(m) => (
            Status::Failed,
            Some(m),
            "claimed post-condition does not contain the image".to_string(),
        ),
        Err(msg) => (Status::Error, None, msg),
    };
    Verdict {
        id: o.id,
        label: o.label.clone(),
        behavior: o.behavior.clone(),
        tactic: o.tactic.name().to_string(),
        status,
        margin,
        message,
    }
}

fn symmetric(m: &Matrix, what: &str) -> Result<SymMatrix, String> {
    if !m.is_square() {
        return Err(format!("{what} is {}x{}, not square", m.rows(), m.cols()));
    }
    let scale = m.max_abs().max(1.0);
    for i in 0..m.rows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                return Err(format!("{what} is not symmetric at ({i}, {j})"));
            }
        }
    }
    Ok(SymMatrix::from_symmetric_part(m))
}

fn distinct(vars: &[String], what: &str) -> Result<(), String> {
    let mut seen = HashSet::new();
    for v in vars {
        if !seen.insert(v) {
            return Err(format!("{what} lists `{v}` twice"));
        }
    }
    Ok(())
}

/// Block-diagonal stack of the pre-conditions, each shape divided by its
/// weight.
fn stacked_pre(o: &Obligation, weights: &[f64], tol: f64) -> Result<(Matrix, Vec<String>), String> {
    let mut vars = Vec::new();
    let mut blocks = Vec::new();
    for (k, (pre, &w)) in o.pre.iter().zip(weights).enumerate() {
        if pre.q.rows() != pre.vars.len() {
            return Err(format!(
                "pre-condition {k} has {} variables for a {}x{} shape",
                pre.vars.len(),
                pre.q.rows(),
                pre.q.cols()
            ));
        }
        let q = symmetric(&pre.q, &format!("pre-condition {k}"))?;
        let low = min_eigenvalue(&q).map_err(|e| e.to_string())?;
        if low < -tol {
            return Err(format!(
                "pre-condition {k} is not an ellipsoid (eigenvalue {low:e})"
            ));
        }
        blocks.push(q.as_matrix().scale(1.0 / w));
        vars.extend(pre.vars.iter().cloned());
    }
    distinct(&vars, "the stacked pre-condition")?;
    let refs: Vec<&Matrix> = blocks.iter().collect();
    Ok((Matrix::block_diag(&refs), vars))
}

/// Relative `λ_min(Q_post - M Q Mᵀ)` where `M` maps the stacked pre
/// variables to the post variables through the assignment.
fn post_margin(o: &Obligation, q: &Matrix, vars: &[String]) -> Result<f64, String> {
    let (nout, nin) = (o.out_vars.len(), o.in_vars.len());
    if o.t.shape() != (nout, nin) {
        return Err(format!(
            "T is {}x{}, expected {nout}x{nin}",
            o.t.rows(),
            o.t.cols()
        ));
    }
    if o.b.len() != nout {
        return Err(format!("b has {} entries, expected {nout}", o.b.len()));
    }
    if o.b.iter().any(|&v| v != 0.0) {
        return Err("nonzero offsets are not supported by centered ellipsoids".into());
    }
    distinct(&o.out_vars, "out_vars")?;
    distinct(&o.post_vars, "post_vars")?;
    let alias: HashMap<&str, &str> = o
        .assumptions
        .iter()
        .map(|a| (a.var.as_str(), a.equals.as_str()))
        .collect();
    let column: HashMap<&str, usize> = vars
        .iter()
        .enumerate()
        .map(|(i, v)| (v.as_str(), i))
        .collect();
    let mut in_cols = Vec::with_capacity(nin);
    for v in &o.in_vars {
        let name = alias.get(v.as_str()).copied().unwrap_or(v);
        let c = column
            .get(name)
            .ok_or_else(|| format!("input `{name}` is not constrained by any pre-condition"))?;
        in_cols.push(*c);
    }
    let mut m = Matrix::zeros(o.post_vars.len(), vars.len());
    for (r, p) in o.post_vars.iter().enumerate() {
        if let Some(i) = o.out_vars.iter().position(|v| v == p) {
            for (j, &c) in in_cols.iter().enumerate() {
                m[(r, c)] += o.t[(i, j)];
            }
        } else if let Some(&c) = column.get(p.as_str()) {
            m[(r, c)] = 1.0;
        } else {
            return Err(format!(
                "post variable `{p}` is neither assigned nor constrained"
            ));
        }
    }
    let post = symmetric(&o.q_post, "Q_post")?;
    if post.dim() != o.post_vars.len() {
        return Err(format!(
            "Q_post is {}x{} for {} post variables",
            post.dim(),
            post.dim(),
            o.post_vars.len()
        ));
    }
    let image = SymMatrix::from_symmetric_part(&(&(&m * q) * &m.transpose()));
    let low = min_eigenvalue(&post.sub(&image)).map_err(|e| e.to_string())?;
    let top = |s: &SymMatrix| max_eigenvalue(s).map_err(|e| e.to_string());
    let scale = top(&post)?.max(top(&image)?);
    Ok(if scale > 0.0 { low / scale } else { low })
}

/// Exact-image obligation with a single pre-condition.
pub fn check_affine(o: &Obligation, tol: f64) -> Verdict {
    let run = || -> Result<f64, String> {
        if o.tactic != Tactic::AffineEllipsoid {
            return Err("not an AffineEllipsoid obligation".into());
        }
        if o.pre.len() != 1 || o.weights.is_some() || o.certificate.is_some() {
            return Err("AffineEllipsoid takes exactly one unweighted pre-condition".into());
        }
        let (q, vars) = stacked_pre(o, &[1.0], tol)?;
        post_margin(o, &q, &vars)
    };
    verdict(o, run(), tol)
}

/// S-procedure obligation: the pre-conditions are combined with positive
/// weights summing to at most one.
pub fn check_sproc(o: &Obligation, tol: f64) -> Verdict {
    let run = || -> Result<f64, String> {
        if o.tactic != Tactic::SProcedure {
            return Err("not an SProcedure obligation".into());
        }
        let weights = match (&o.weights, &o.certificate) {
            (Some(w), None) => w.clone(),
            (None, Some(c)) => {
                if !(c.alpha > 0.0 && c.gamma > 0.0 && c.alpha + c.gamma < 1.0) {
                    return Err(format!(
                        "multipliers alpha = {}, gamma = {} need alpha, gamma > 0 and alpha + gamma < 1",
                        c.alpha, c.gamma
                    ));
                }
                vec![c.gamma, 1.0 - c.alpha - c.gamma]
            }
            _ => return Err("SProcedure needs either weights or a certificate".into()),
        };
        if weights.len() != o.pre.len() || o.pre.is_empty() {
            return Err(format!(
                "{} weights for {} pre-conditions",
                weights.len(),
                o.pre.len()
            ));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w > 0.0))
            || total > 1.0 + 4.0 * f64::EPSILON * weights.len() as f64
        {
            return Err(format!(
                "weights {weights:?} must be positive with sum at most 1"
            ));
        }
        let (q, vars) = stacked_pre(o, &weights, tol)?;
        post_margin(o, &q, &vars)
    };
    verdict(o, run(), tol)
}

pub fn check_obligation(o: &Obligation, tol: f64) -> Verdict {
    match o.tactic {
        Tactic::AffineEllipsoid => check_affine(o, tol),
        Tactic::SProcedure => check_sproc(o, tol),
    }
}

/// Recomputes `sqrt(level λ_max(C P⁻¹ Cᵀ))` and compares it with `r_th`.
pub fn check_derived(d: &Derived, tol: f64) -> Verdict {
    let run = || -> Result<f64, String> {
        if d.kind != "residual_threshold" {
            return Err(format!("unknown derived obligation `{}`", d.kind));
        }
        let p = symmetric(&d.p, "P")?;
        if p.dim() != d.vars.len() || d.c.cols() != p.dim() {
            return Err("P, C and vars disagree in dimension".into());
        }
        cholesky(&p).map_err(|_| "P is not positive definite".to_string())?;
        if !(d.level >= 0.0) {
            return Err(format!("level {} is negative", d.level));
        }
        let q = inverse_spd(&p).map_err(|e| e.to_string())?;
        let out = q.congruence(&d.c).map_err(|e| e.to_string())?;
        let bound = (d.level * max_eigenvalue(&out).map_err(|e| e.to_string())?.max(0.0)).sqrt();
        Ok(if bound > 0.0 {
            (d.r_th - bound) / bound
        } else {
            d.r_th
        })
    };
    let (status, margin, message) = match run() {
        Ok(m) if m >= -tol => (Status::Proved, Some(m), String::new()),
        Ok(m) => (
            Status::Failed,
            Some(m),
            "threshold is below the largest nominal residual".into(),
        ),
        Err(msg) => (Status::Error, None, msg),
    };
    Verdict {
        id: d.id,
        label: d.kind.clone(),
        behavior: d.behavior.clone(),
        tactic: "Derived".into(),
        status,
        margin,
        message,
    }
}

pub fn check_sidecar(s: &Sidecar, tol: f64) -> Report {
    let mut verdicts: Vec<Verdict> = s
        .obligations
        .iter()
        .map(|o| check_obligation(o, tol))
        .collect();
    verdicts.extend(s.derived.iter().map(|d| check_derived(d, tol)));
    let mut seen = HashSet::new();
    for v in &mut verdicts {
        if !seen.insert(v.id) {
            v.status = Status::Error;
            v.margin = None;
            v.message = format!("duplicate obligation id {}", v.id);
        }
    }
    verdicts.sort_by_key(|v| v.id);
    let count = |st: Status| verdicts.iter().filter(|v| v.status == st).count();
    Report {
        model: s.model.clone(),
        tol,
        proved: count(Status::Proved),
        failed: count(Status::Failed),
        errors: count(Status::Error),
        verdicts,
    }
}

pub fn check_file(path: &Path, tol: f64) -> Result<Report, SidecarError> {
    Ok(check_sidecar(&Sidecar::load(path)?, tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sidecar::{Alias, Multipliers, PreCondition};

    fn m(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    /// `x := 2x` with `x² <= 1`: the exact post is `x² <= 4`.
    fn doubling(post: f64) -> Obligation {
        Obligation {
            id: 1,
            label: "double".into(),
            behavior: None,
            tactic: Tactic::AffineEllipsoid,
            in_vars: names(&["x"]),
            out_vars: names(&["x"]),
            t: m(&[vec![2.0]]),
            b: vec![0.0],
            assumptions: vec![],
            weights: None,
            certificate: None,
            post_vars: names(&["x"]),
            q_post: m(&[vec![post]]),
            pre: vec![PreCondition {
                vars: names(&["x"]),
                q: m(&[vec![1.0]]),
            }],
        }
    }

    #[test]
    fn affine_examples() {
        let exact = check_affine(&doubling(4.0), 1e-8);
        assert_eq!(exact.status, Status::Proved);
        assert!(exact.margin.unwrap().abs() < 1e-15);
        assert_eq!(check_affine(&doubling(3.6), 1e-8).status, Status::Failed);
        assert_eq!(check_affine(&doubling(4.4), 1e-8).status, Status::Proved);
        let mut bad = doubling(4.0);
        bad.t = m(&[vec![2.0, 1.0]]);
        assert_eq!(check_affine(&bad, 1e-8).status, Status::Error);
    }

    #[test]
    fn stacked_post_keeps_unassigned_variables() {
        // y := x over x² <= 1, post over (x, y) is the degenerate [[1,1],[1,1]]
        let mut o = doubling(0.0);
        o.out_vars = names(&["y"]);
        o.t = m(&[vec![1.0]]);
        o.post_vars = names(&["x", "y"]);
        o.q_post = m(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert_eq!(check_affine(&o, 1e-12).status, Status::Proved);
        o.q_post = m(&[vec![1.0, 0.9], vec![0.9, 1.0]]);
        assert_eq!(check_affine(&o, 1e-12).status, Status::Failed);
    }

    #[test]
    fn aliases_substitute_inputs() {
        let mut o = doubling(4.0);
        o.in_vars = names(&["io_x"]);
        assert_eq!(check_affine(&o, 1e-8).status, Status::Error);
        o.assumptions = vec![Alias {
            var: "io_x".into(),
            equals: "x".into(),
        }];
        assert_eq!(check_affine(&o, 1e-8).status, Status::Proved);
    }

    /// `e := x - xhat` over two unit balls.
    fn error_obligation(alpha: f64, gamma: f64, post: f64) -> Obligation {
        Obligation {
            id: 2,
            label: "error_state".into(),
            behavior: Some("nominal".into()),
            tactic: Tactic::SProcedure,
            in_vars: names(&["x", "xhat"]),
            out_vars: names(&["e"]),
            t: m(&[vec![1.0, -1.0]]),
            b: vec![0.0],
            assumptions: vec![],
            weights: None,
            certificate: Some(Multipliers { alpha, gamma }),
            post_vars: names(&["e"]),
            q_post: m(&[vec![post]]),
            pre: vec![
                PreCondition {
                    vars: names(&["x"]),
                    q: m(&[vec![1.0]]),
                },
                PreCondition {
                    vars: names(&["xhat"]),
                    q: m(&[vec![1.0]]),
                },
            ],
        }
    }

    #[test]
    fn sproc_examples() {
        // weights (0.4, 0.4): Q_e = 1/0.4 + 1/0.4 = 5
        assert_eq!(
            check_sproc(&error_obligation(0.2, 0.4, 5.0), 1e-8).status,
            Status::Proved
        );
        // halving gamma without recomputing the post
        assert_eq!(
            check_sproc(&error_obligation(0.2, 0.2, 5.0), 1e-8).status,
            Status::Failed
        );
        assert_eq!(
            check_sproc(&error_obligation(0.5, 0.5, 5.0), 1e-8).status,
            Status::Error
        );
        let mut w = error_obligation(0.2, 0.4, 5.0);
        w.certificate = None;
        w.weights = Some(vec![0.6, 0.5]);
        assert_eq!(check_sproc(&w, 1e-8).status, Status::Error);
    }

    #[test]
    fn derived_threshold() {
        let d = Derived {
            id: 3,
            kind: "residual_threshold".into(),
            behavior: None,
            vars: names(&["e[0]", "e[1]"]),
            p: m(&[vec![4.0, 0.0], vec![0.0, 1.0]]),
            level: 1.0,
            c: m(&[vec![1.0, 0.0]]),
            r_th: 0.5,
        };
        assert_eq!(check_derived(&d, 1e-12).status, Status::Proved);
        let low = Derived { r_th: 0.49, ..d };
        assert_eq!(check_derived(&low, 1e-12).status, Status::Failed);
    }

    #[test]
    fn report_counts_and_ids() {
        let mut s = Sidecar::new("demo");
        s.obligations.push(doubling(4.0));
        let mut second = doubling(3.0);
        second.id = 5;
        s.obligations.push(second);
        let r = check_sidecar(&s, 1e-8);
        assert_eq!((r.proved, r.failed, r.errors), (1, 1, 0));
        assert!(!r.all_proved());
        assert!(r.to_text().contains("FAILED"));
        let empty = check_sidecar(&Sidecar::new("none"), 1e-8);
        assert!(empty.all_proved() && empty.verdicts.is_empty());
    }
}
