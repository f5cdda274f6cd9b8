//! TOML model files.
//!
//! A detector model has the tables `plant` (either `params` or continuous
//! `A`, `B`, `C`), `controller` (`A`, `B`, `C`, `D`; the columns of `B` are
//! `[y; y_c]`, `D` acts on `y`), `observer` (`L`, optional
//! `initial_error_radius`), `fault` (`X`, `sigma`) and `reference_bound`
//! (`radius`, or a P-form shape `P`), plus the top-level `name` and `dt`.
//!
//! A loop model has `kind = "loop"` and a `loop` table with discrete `A`,
//! `B`, the input bound shape `input_P`, the C names `state`, `input` and an
//! optional `lmi_tolerance` (default `-1e-8`, i.e. strict feasibility).

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use super::{
    build_plant_matrices, discretize_zoh, Controller, FaultModel, FdModel, LoopModel,
    LtiContinuous, Model, ModelError, PhysicalParams,
};
use crate::numerics::{inverse_spd, Matrix, SymMatrix};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed model file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    name: String,
    #[serde(default)]
    kind: Option<String>,
    dt: Option<f64>,
    plant: Option<RawPlant>,
    controller: Option<RawController>,
    observer: Option<RawObserver>,
    fault: Option<RawFault>,
    reference_bound: Option<RawReference>,
    #[serde(rename = "loop")]
    lp: Option<RawLoop>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlant {
    params: Option<PhysicalParams>,
    #[serde(rename = "A")]
    a: Option<Matrix>,
    #[serde(rename = "B")]
    b: Option<Matrix>,
    #[serde(rename = "C")]
    c: Option<Matrix>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawController {
    #[serde(rename = "A")]
    a: Matrix,
    #[serde(rename = "B")]
    b: Matrix,
    #[serde(rename = "C")]
    c: Matrix,
    #[serde(rename = "D")]
    d: Matrix,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawObserver {
    #[serde(rename = "L")]
    l: Matrix,
    #[serde(default)]
    initial_error_radius: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFault {
    #[serde(rename = "X")]
    x: Matrix,
    sigma: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReference {
    radius: Option<f64>,
    #[serde(rename = "P")]
    p: Option<SymMatrix>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLoop {
    #[serde(rename = "A")]
    a: Matrix,
    #[serde(rename = "B")]
    b: Matrix,
    #[serde(rename = "input_P")]
    input_p: SymMatrix,
    state: String,
    input: String,
    lmi_tolerance: Option<f64>,
}

pub fn load_model(path: &Path) -> Result<Model, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_model(&text)
}

pub fn parse_model(text: &str) -> Result<Model, ConfigError> {
    let raw: RawModel = toml::from_str(text)?;
    match raw.kind.as_deref() {
        Some("loop") => Ok(Model::Loop(loop_model(raw)?)),
        None | Some("detector") => Ok(Model::Detector(detector_model(raw)?)),
        Some(other) => Err(invalid(format!("unknown model kind `{other}`"))),
    }
}

fn invalid(msg: String) -> ConfigError {
    ConfigError::Model(ModelError::Invalid(msg))
}

fn missing(what: &str) -> ConfigError {
    invalid(format!("missing `{what}`"))
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn loop_model(raw: RawModel) -> Result<LoopModel, ConfigError> {
    let lp = raw.lp.ok_or_else(|| missing("loop"))?;
    let n = lp.a.rows();
    if !lp.a.is_square() || lp.b.rows() != n || lp.input_p.dim() != lp.b.cols() {
        return Err(invalid("loop dimensions are inconsistent".into()));
    }
    for id in [&lp.state, &lp.input, &raw.name] {
        if !is_identifier(id) {
            return Err(invalid(format!("`{id}` is not a C identifier")));
        }
    }
    if lp.state == lp.input {
        return Err(invalid("loop state and input need distinct names".into()));
    }
    Ok(LoopModel {
        name: raw.name,
        a: lp.a,
        b: lp.b,
        input_p: lp.input_p,
        state: lp.state,
        input: lp.input,
        lmi_tolerance: lp.lmi_tolerance.unwrap_or(-1e-8),
    })
}

fn detector_model(raw: RawModel) -> Result<FdModel, ConfigError> {
    if !is_identifier(&raw.name) {
        return Err(invalid(format!(
            "model name `{}` is not a C identifier",
            raw.name
        )));
    }
    let dt = raw.dt.ok_or_else(|| missing("dt"))?;
    let plant = raw.plant.ok_or_else(|| missing("plant"))?;
    let continuous = match (plant.params, plant.a, plant.b, plant.c) {
        (Some(p), None, None, None) => build_plant_matrices(&p)?,
        (None, Some(a), Some(b), Some(c)) => LtiContinuous::new(a, b, c)?,
        _ => {
            return Err(invalid(
                "plant needs either `params` or all of `A`, `B`, `C`".into(),
            ))
        }
    };
    let plant = discretize_zoh(&continuous, dt)?;
    let ctl = raw.controller.ok_or_else(|| missing("controller"))?;
    let q = plant.output_dim();
    if ctl.b.cols() < q {
        return Err(invalid(format!(
            "controller B has {} columns, expected at least the {q} plant outputs",
            ctl.b.cols()
        )));
    }
    let nc = ctl.b.rows();
    let r = ctl.b.cols() - q;
    let controller = Controller {
        a: ctl.a,
        b_y: ctl.b.submatrix(0, 0, nc, q),
        b_r: ctl.b.submatrix(0, q, nc, r),
        c: ctl.c,
        d: ctl.d,
    };
    let obs = raw.observer.ok_or_else(|| missing("observer"))?;
    let fault = raw.fault.ok_or_else(|| missing("fault"))?;
    let reference = raw
        .reference_bound
        .ok_or_else(|| missing("reference_bound"))?;
    let reference_shape = match (reference.radius, reference.p) {
        (Some(rad), None) if rad >= 0.0 => SymMatrix::identity(r).scale(rad * rad),
        (None, Some(p)) => inverse_spd(&p).map_err(ModelError::from)?,
        _ => {
            return Err(invalid(
                "reference_bound needs exactly one of a nonnegative `radius` or `P`".into(),
            ))
        }
    };
    let model = FdModel {
        name: raw.name,
        plant,
        controller,
        observer_gain: obs.l,
        initial_error_radius: obs.initial_error_radius,
        fault: FaultModel {
            x: fault.x,
            sigma: fault.sigma,
        },
        reference_shape,
        dt,
    };
    model.validate()?;
    Ok(model)
}
