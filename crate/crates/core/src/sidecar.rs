//! Proof-obligation sidecar: the machine-readable twin of the contracts in
//! the generated C.
//!
//! The file is TOML. Top-level keys are `format`, `version` and `model`,
//! followed by `[[obligation]]` and `[[derived]]` tables.
//!
//! An obligation states `{pre} out_vars := T in_vars + b {post}`:
//!
//! | key           | meaning                                                         |
//! |---------------|-----------------------------------------------------------------|
//! | `id`          | dense, starting at 1                                            |
//! | `label`       | statement role                                                  |
//! | `behavior`    | `nominal` / `faulty`, absent for single-behavior programs       |
//! | `tactic`      | `AffineEllipsoid` or `SProcedure`                               |
//! | `in_vars`     | statement inputs, before alias substitution                     |
//! | `out_vars`    | assigned variables                                              |
//! | `T`, `b`      | the assignment, rows follow `out_vars`                          |
//! | `assumptions` | `{ var, equals }` aliases: `var` is read as `equals`            |
//! | `weights`     | S-procedure weights, one per `pre` entry                        |
//! | `certificate` | `{ alpha, gamma }`; weights are then `(gamma, 1 - alpha - gamma)` |
//! | `post_vars`   | variables of the post-condition                                 |
//! | `Q_post`      | shape of the post-condition                                     |
//! | `pre`         | `[[obligation.pre]]` tables with `vars` and `Q`                 |
//!
//! Every ellipsoid is `{v | [[1, vᵀ], [v, Q]] ⪰ 0}`. A post variable that is
//! assigned takes its new value; any other post variable must occur in a
//! pre-condition and keeps its value.
//!
//! `[[derived]]` entries with `kind = "residual_threshold"` claim that
//! `‖C e‖ <= r_th` whenever `eᵀ P e <= level`.
//!
//! Matrices are written row-major with 17 significant digits, the same
//! digits the C annotations print.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::Matrix;

pub const FORMAT: &str = "fdcert-obligations";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SidecarError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed sidecar: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported sidecar format `{format}` version {version}")]
    Format { format: String, version: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tactic {
    AffineEllipsoid,
    SProcedure,
}

impl Tactic {
    pub fn name(self) -> &'static str {
        match self {
            Tactic::AffineEllipsoid => "AffineEllipsoid",
            Tactic::SProcedure => "SProcedure",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Alias {
    pub var: String,
    pub equals: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Multipliers {
    pub alpha: f64,
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreCondition {
    pub vars: Vec<String>,
    #[serde(rename = "Q")]
    pub q: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obligation {
    pub id: u32,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub behavior: Option<String>,
    pub tactic: Tactic,
    pub in_vars: Vec<String>,
    pub out_vars: Vec<String>,
    #[serde(rename = "T")]
    pub t: Matrix,
    pub b: Vec<f64>,
    #[serde(default)]
    pub assumptions: Vec<Alias>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<Multipliers>,
    pub post_vars: Vec<String>,
    #[serde(rename = "Q_post")]
    pub q_post: Matrix,
    #[serde(default)]
    pub pre: Vec<PreCondition>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Derived {
    pub id: u32,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub behavior: Option<String>,
    pub vars: Vec<String>,
    #[serde(rename = "P")]
    pub p: Matrix,
    pub level: f64,
    #[serde(rename = "C")]
    pub c: Matrix,
    pub r_th: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub format: String,
    pub version: u32,
    pub model: String,
    #[serde(default, rename = "obligation")]
    pub obligations: Vec<Obligation>,
    #[serde(default, rename = "derived")]
    pub derived: Vec<Derived>,
}

impl Sidecar {
    pub fn new(model: &str) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            model: model.into(),
            obligations: Vec::new(),
            derived: Vec::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, SidecarError> {
        let s: Sidecar = toml::from_str(text)?;
        if s.format != FORMAT || s.version != VERSION {
            return Err(SidecarError::Format {
                format: s.format,
                version: s.version,
            });
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, SidecarError> {
        let text = std::fs::read_to_string(path).map_err(|source| SidecarError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Deterministic text form; numbers carry 17 significant digits.
    pub fn emit(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "format = {}", quote(&self.format));
        let _ = writeln!(out, "version = {}", self.version);
        let _ = writeln!(out, "model = {}", quote(&self.model));
        for o in &self.obligations {
            out.push_str("\n[[obligation]]\n");
            let _ = writeln!(out, "id = {}", o.id);
            let _ = writeln!(out, "label = {}", quote(&o.label));
            if let Some(b) = &o.behavior {
                let _ = writeln!(out, "behavior = {}", quote(b));
            }
            let _ = writeln!(out, "tactic = {}", quote(o.tactic.name()));
            let _ = writeln!(out, "in_vars = {}", strings(&o.in_vars));
            let _ = writeln!(out, "out_vars = {}", strings(&o.out_vars));
            let _ = writeln!(out, "T = {}", matrix(&o.t));
            let _ = writeln!(out, "b = {}", numbers(&o.b));
            let aliases: Vec<String> = o
                .assumptions
                .iter()
                .map(|a| {
                    format!(
                        "{{ var = {}, equals = {} }}",
                        quote(&a.var),
                        quote(&a.equals)
                    )
                })
                .collect();
            let _ = writeln!(out, "assumptions = [{}]", aliases.join(", "));
            if let Some(w) = &o.weights {
                let _ = writeln!(out, "weights = {}", numbers(w));
            }
            if let Some(c) = &o.certificate {
                let _ = writeln!(
                    out,
                    "certificate = {{ alpha = {}, gamma = {} }}",
                    number(c.alpha),
                    number(c.gamma)
                );
            }
            let _ = writeln!(out, "post_vars = {}", strings(&o.post_vars));
            let _ = writeln!(out, "Q_post = {}", matrix(&o.q_post));
            for p in &o.pre {
                out.push_str("\n[[obligation.pre]]\n");
                let _ = writeln!(out, "vars = {}", strings(&p.vars));
                let _ = writeln!(out, "Q = {}", matrix(&p.q));
            }
        }
        for d in &self.derived {
            out.push_str("\n[[derived]]\n");
            let _ = writeln!(out, "id = {}", d.id);
            let _ = writeln!(out, "kind = {}", quote(&d.kind));
            if let Some(b) = &d.behavior {
                let _ = writeln!(out, "behavior = {}", quote(b));
            }
            let _ = writeln!(out, "vars = {}", strings(&d.vars));
            let _ = writeln!(out, "P = {}", matrix(&d.p));
            let _ = writeln!(out, "level = {}", number(d.level));
            let _ = writeln!(out, "C = {}", matrix(&d.c));
            let _ = writeln!(out, "r_th = {}", number(d.r_th));
        }
        out
    }
}

/// `{:.16e}`: 17 significant digits, which round-trips every `f64`.
pub fn number(v: f64) -> String {
    format!("{v:.16e}")
}

fn quote(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn strings(v: &[String]) -> String {
    let items: Vec<String> = v.iter().map(|s| quote(s)).collect();
    format!("[{}]", items.join(", "))
}

fn numbers(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|&x| number(x)).collect();
    format!("[{}]", items.join(", "))
}

fn matrix(m: &Matrix) -> String {
    let rows: Vec<String> = (0..m.rows()).map(|i| numbers(m.row(i))).collect();
    format!("[{}]", rows.join(", "))
}
