//! The certificate bundle and the end-to-end synthesis that fills it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    faulty_level_set, residual_threshold, synth_invariant, InputBound, SynthOptions, SynthesisError,
};
use crate::ellipsoid::{sproc_combine, var_names, EllipsoidP, SProcCertificate};
use crate::model::{assemble, FdModel, LoopModel, Mode};
use crate::numerics::{
    cholesky, discrete_lyapunov, inverse_spd, log_det_spd, max_eigenvalue, Matrix, SymMatrix,
};

/// Invariants for one plant mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeCertificates {
    /// Closed-loop invariant over `[x; x_c]`.
    pub closed_loop: EllipsoidP,
    pub closed_loop_alpha: f64,
    pub closed_loop_lmi_max_eig: f64,
    /// Observer invariant over `x̂`.
    pub observer: EllipsoidP,
    pub observer_lmi_max_eig: f64,
    /// Shape of `û = [u; x]` obtained from the closed-loop invariant.
    pub input_shape: SymMatrix,
    /// Multipliers of the error-state combination (`alpha` is the observer's).
    pub sproc: SProcCertificate,
    /// Error-state invariant over `e = x - x̂`.
    pub error: EllipsoidP,
}

/// Residual detector: `{e | eᵀ P e <= zeta}` holds nominally, `zeta_bar`
/// bounds the faulty error, and `r_th` is the largest nominal `‖C e‖`.
///
/// `P` solves `ÂᵀPÂ - P = -I`, so both level sets shrink under `Â`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorCertificate {
    #[serde(rename = "P")]
    pub p: SymMatrix,
    pub zeta: f64,
    pub zeta_bar: f64,
    pub r_th: f64,
}

impl DetectorCertificate {
    pub fn nominal(&self) -> Result<EllipsoidP, SynthesisError> {
        let n = self.p.dim();
        Ok(EllipsoidP::new(
            self.p.clone(),
            var_names("e", n),
            self.zeta,
        )?)
    }

    pub fn faulty(&self) -> Result<EllipsoidP, SynthesisError> {
        let n = self.p.dim();
        Ok(EllipsoidP::new(
            self.p.clone(),
            var_names("e", n),
            self.zeta_bar,
        )?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateBundle {
    pub model: String,
    pub sigma: f64,
    pub nominal: ModeCertificates,
    pub faulty: ModeCertificates,
    pub detector: DetectorCertificate,
}

impl CertificateBundle {
    pub fn mode(&self, mode: Mode) -> &ModeCertificates {
        match mode {
            Mode::Nominal => &self.nominal,
            Mode::Faulty => &self.faulty,
        }
    }

    /// Cross-checks the invariants a bundle must satisfy after loading.
    pub fn validate(&self) -> Result<(), SynthesisError> {
        let bad = |m: String| Err(SynthesisError::Bundle(m));
        for (label, mc) in [("nominal", &self.nominal), ("faulty", &self.faulty)] {
            for (what, e) in [
                ("closed_loop", &mc.closed_loop),
                ("observer", &mc.observer),
                ("error", &mc.error),
            ] {
                if e.p.dim() != e.vars.len() || cholesky(&e.p).is_err() {
                    return bad(format!(
                        "{label}.{what} is not a positive definite ellipsoid"
                    ));
                }
            }
            mc.sproc.validate()?;
        }
        let d = &self.detector;
        if cholesky(&d.p).is_err() {
            return bad("detector P is not positive definite".into());
        }
        if !(d.zeta <= d.zeta_bar) {
            return bad(format!("zeta {} exceeds zeta_bar {}", d.zeta, d.zeta_bar));
        }
        if !(d.r_th > 0.0) {
            return bad(format!("residual threshold {} must be positive", d.r_th));
        }
        Ok(())
    }
}

/// Invariant of a single bounded-input loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopBundle {
    pub model: String,
    pub invariant: EllipsoidP,
    pub alpha: f64,
    pub lmi_max_eig: f64,
    pub lmi_tolerance: f64,
}

#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Bundle {
    Detector(CertificateBundle),
    Loop(LoopBundle),
}

impl Bundle {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("bundle fields are all representable in TOML")
    }

    pub fn from_toml(text: &str) -> Result<Self, SynthesisError> {
        let b: Bundle = toml::from_str(text).map_err(|e| SynthesisError::Bundle(e.to_string()))?;
        if let Bundle::Detector(d) = &b {
            d.validate()?;
        }
        Ok(b)
    }

    pub fn load(path: &Path) -> Result<Self, SynthesisError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SynthesisError::Bundle(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

fn input_bound(q: &SymMatrix) -> InputBound {
    match inverse_spd(q) {
        Ok(p) if cholesky(&p).is_ok() && p.is_finite() => InputBound::P(p),
        _ => InputBound::Q(q.clone()),
    }
}

/// Multiplier `γ` maximizing `det P_e` on a uniform grid over `(0, 1 - α)`.
fn best_gamma(qx: &SymMatrix, qxh: &SymMatrix, alpha: f64) -> Result<f64, SynthesisError> {
    let steps = 400;
    let mut best: Option<(f64, f64)> = None;
    for j in 1..steps {
        let gamma = (1.0 - alpha) * j as f64 / steps as f64;
        let q = qx
            .scale(1.0 / gamma)
            .add(&qxh.scale(1.0 / (1.0 - alpha - gamma)));
        let ld = log_det_spd(&q)?;
        if best.is_none_or(|(b, _)| ld < b) {
            best = Some((ld, gamma));
        }
    }
    Ok(best.expect("grid is nonempty").1)
}

fn mode_certificates(
    model: &FdModel,
    mode: Mode,
    opts: &SynthOptions,
) -> Result<ModeCertificates, SynthesisError> {
    let derived = assemble(model)?;
    let cl = derived.closed(mode);
    let n = model.plant.state_dim();
    let nc = model.controller.state_dim();
    let closed = synth_invariant(&cl.a, &cl.b, &input_bound(&model.reference_shape), opts)?;
    log::info!(
        "{} closed loop: alpha {}, lambda_max {:e}",
        mode.label(),
        closed.alpha,
        closed.lmi_max_eig
    );
    let q_cl = inverse_spd(&closed.p)?;
    // û = [u; x] = [K; I 0] x̃
    let sel = Matrix::hstack(&[&Matrix::identity(n), &Matrix::zeros(n, nc)])?;
    let t = Matrix::vstack(&[&cl.u_map, &sel])?;
    let input_shape = q_cl.congruence(&t)?;
    let obs = synth_invariant(
        &derived.a_hat,
        &derived.b_hat,
        &input_bound(&input_shape),
        opts,
    )?;
    log::info!(
        "{} observer: alpha {}, lambda_max {:e}",
        mode.label(),
        obs.alpha,
        obs.lmi_max_eig
    );
    let idx: Vec<usize> = (0..n).collect();
    let qx = q_cl.principal(&idx);
    let px = inverse_spd(&qx)?;
    let qxh = inverse_spd(&obs.p)?;
    let gamma = best_gamma(&qx, &qxh, obs.alpha)?;
    let sproc = SProcCertificate::new(obs.alpha, gamma)?;
    let mut vars = var_names("x", n);
    vars.extend(var_names("x_c", nc));
    let closed_loop = EllipsoidP::unit(closed.p, vars)?;
    let observer = EllipsoidP::unit(obs.p, var_names("xhat", n))?;
    let error = sproc_combine(
        &EllipsoidP::unit(px, var_names("x", n))?,
        &observer,
        &sproc,
        var_names("e", n),
    )?;
    Ok(ModeCertificates {
        closed_loop,
        closed_loop_alpha: closed.alpha,
        closed_loop_lmi_max_eig: closed.lmi_max_eig,
        observer,
        observer_lmi_max_eig: obs.lmi_max_eig,
        input_shape,
        sproc,
        error,
    })
}

fn detector_certificate(model: &FdModel) -> Result<DetectorCertificate, SynthesisError> {
    let derived = assemble(model)?;
    let rho0 = model.initial_error_radius;
    if !(rho0 > 0.0) {
        return Err(SynthesisError::Input(
            "initial_error_radius must be positive for a positive residual threshold".into(),
        ));
    }
    let n = derived.a_hat.rows();
    let p = discrete_lyapunov(&derived.a_hat.transpose(), &SymMatrix::identity(n))?;
    // smallest level holding the ball of radius ρ0
    let zeta = rho0 * rho0 * max_eigenvalue(&p)?;
    // every level above the smallest invariant one is invariant too
    let zeta_bar = faulty_level_set(&derived.a_hat, &derived.e, &p, model.fault.sigma)?.max(zeta);
    let r_th = residual_threshold(&p, zeta, &model.plant.c)?;
    log::info!("detector: zeta {zeta:e}, zeta_bar {zeta_bar:e}, r_th {r_th:e}");
    Ok(DetectorCertificate {
        p,
        zeta,
        zeta_bar,
        r_th,
    })
}

/// Closed-loop, observer, error and detector certificates for both modes.
pub fn synthesize(
    model: &FdModel,
    opts: &SynthOptions,
) -> Result<CertificateBundle, SynthesisError> {
    let bundle = CertificateBundle {
        model: model.name.clone(),
        sigma: model.fault.sigma,
        nominal: mode_certificates(model, Mode::Nominal, opts)?,
        faulty: mode_certificates(model, Mode::Faulty, opts)?,
        detector: detector_certificate(model)?,
    };
    bundle.validate()?;
    Ok(bundle)
}

pub fn synthesize_loop(model: &LoopModel) -> Result<LoopBundle, SynthesisError> {
    let opts = SynthOptions {
        margin: -model.lmi_tolerance,
        ..SynthOptions::default()
    };
    let inv = synth_invariant(
        &model.a,
        &model.b,
        &InputBound::P(model.input_p.clone()),
        &opts,
    )?;
    let n = model.a.rows();
    let vars = if n == 1 {
        vec![model.state.clone()]
    } else {
        var_names(&model.state, n)
    };
    Ok(LoopBundle {
        model: model.name.clone(),
        invariant: EllipsoidP::unit(inv.p, vars)?,
        alpha: inv.alpha,
        lmi_max_eig: inv.lmi_max_eig,
        lmi_tolerance: model.lmi_tolerance,
    })
}
