//! Detection metrics and the adversarial error run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{in_ball, norm, within, LoopTrace, Sample, SimError, Trace};
use crate::model::{assemble, FdModel, Mode};
use crate::synthesis::CertificateBundle;

/// Worst values and exit counts over one mode segment of a trace.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentStats {
    pub steps: usize,
    pub max_v_detector: f64,
    pub max_v_error: f64,
    pub max_r_norm: f64,
    pub nominal_set_exits: usize,
    pub faulty_set_exits: usize,
    pub error_set_exits: usize,
    pub closed_loop_exits: usize,
    pub observer_exits: usize,
}

impl SegmentStats {
    fn of(samples: &[Sample]) -> Self {
        let mut s = SegmentStats {
            steps: samples.len(),
            ..Default::default()
        };
        for x in samples {
            s.max_v_detector = s.max_v_detector.max(x.v_detector);
            s.max_v_error = s.max_v_error.max(x.v_error);
            s.max_r_norm = s.max_r_norm.max(x.r_norm);
            s.nominal_set_exits += usize::from(!x.in_nominal_set);
            s.faulty_set_exits += usize::from(!x.in_faulty_set);
            s.error_set_exits += usize::from(!x.in_error_set);
            s.closed_loop_exits += usize::from(!x.in_closed_loop);
            s.observer_exits += usize::from(!x.in_observer);
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub model: String,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault_start: Option<usize>,
    pub r_th: f64,
    pub zeta: f64,
    pub zeta_bar: f64,
    pub sigma: f64,
    /// Alarms before the fault starts.
    pub false_alarms: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection_step: Option<usize>,
    /// Steps from the fault start to the first alarm at or after it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<usize>,
    pub alarms_after_fault: usize,
    pub max_fault_norm: f64,
    /// Faulty steps with `‖f‖ > σ`; `ζ̄` is only claimed when this is zero.
    pub fault_bound_violations: usize,
    pub nominal: SegmentStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub faulty: Option<SegmentStats>,
}

impl DetectionMetrics {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("metrics are representable in TOML")
    }

    /// Observations that contradict the certificates. The faulty sets are
    /// only claimed while `‖f‖ <= σ`; a missed detection is not a violation.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let n = &self.nominal;
        for (count, what) in [
            (self.false_alarms, "false alarms"),
            (n.nominal_set_exits, "exits from the nominal detector set"),
            (n.error_set_exits, "nominal error-set exits"),
            (n.closed_loop_exits, "nominal closed-loop exits"),
            (n.observer_exits, "nominal observer exits"),
        ] {
            if count > 0 {
                v.push(format!("{count} {what}"));
            }
        }
        if let Some(f) = &self.faulty {
            if self.fault_bound_violations == 0 && f.faulty_set_exits > 0 {
                v.push(format!(
                    "{} exits from the faulty detector set",
                    f.faulty_set_exits
                ));
            }
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopMetrics {
    pub model: String,
    pub steps: usize,
    pub level: f64,
    pub max_v: f64,
    pub exits: usize,
}

impl LoopMetrics {
    pub fn of(trace: &LoopTrace) -> Self {
        Self {
            model: trace.model.clone(),
            steps: trace.samples.len(),
            level: trace.level,
            max_v: trace.max_v(),
            exits: trace.exits(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("metrics are representable in TOML")
    }
}

pub fn detection_metrics(trace: &Trace, bundle: &CertificateBundle) -> DetectionMetrics {
    let split = trace
        .samples
        .iter()
        .position(|s| s.mode == Mode::Faulty)
        .unwrap_or(trace.samples.len());
    let (nominal, faulty) = trace.samples.split_at(split);
    let detection_step = trace
        .fault_start
        .and_then(|_| faulty.iter().find(|s| s.alarm).map(|s| s.step));
    DetectionMetrics {
        model: trace.model.clone(),
        steps: trace.samples.len(),
        fault_start: trace.fault_start,
        r_th: bundle.detector.r_th,
        zeta: bundle.detector.zeta,
        zeta_bar: bundle.detector.zeta_bar,
        sigma: bundle.sigma,
        false_alarms: nominal.iter().filter(|s| s.alarm).count(),
        detection_step,
        latency: detection_step.zip(trace.fault_start).map(|(d, s)| d - s),
        alarms_after_fault: faulty.iter().filter(|s| s.alarm).count(),
        max_fault_norm: faulty.iter().map(|s| s.f_norm).fold(0.0, f64::max),
        fault_bound_violations: faulty.iter().filter(|s| s.f_norm > bundle.sigma).count(),
        nominal: SegmentStats::of(nominal),
        faulty: trace.fault_start.map(|_| SegmentStats::of(faulty)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarialRun {
    pub steps: usize,
    pub max_v: f64,
    pub zeta_bar: f64,
    pub exits: usize,
    pub max_fault_norm: f64,
}

/// Drives `e⁺ = Â e + E f` with `‖f‖ = σ` pointed where it grows `eᵀ P e`
/// the most to first order, from a random start in the initial ball.
pub fn adversarial_error_run(
    model: &FdModel,
    bundle: &CertificateBundle,
    steps: usize,
    seed: u64,
) -> Result<AdversarialRun, SimError> {
    let d = assemble(model)?;
    let det = &bundle.detector;
    let p = det.p.as_matrix();
    let sigma = model.fault.sigma;
    // keep ‖f‖ <= σ after rounding
    let radius = sigma * (1.0 - 8.0 * f64::EPSILON);
    let g_map = d.e.transpose().matmul(p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e = in_ball(&mut rng, d.a_hat.rows(), model.initial_error_radius);
    let mut run = AdversarialRun {
        steps,
        max_v: 0.0,
        zeta_bar: det.zeta_bar,
        exits: 0,
        max_fault_norm: 0.0,
    };
    for _ in 0..steps {
        let v = p.quad_form(&e)?;
        run.max_v = run.max_v.max(v);
        run.exits += usize::from(!within(v, det.zeta_bar));
        let ae = d.a_hat.mul_vec(&e)?;
        let g = g_map.mul_vec(&ae)?;
        let gn = norm(&g);
        let f: Vec<f64> = if gn > 0.0 {
            g.iter().map(|x| x * radius / gn).collect()
        } else {
            in_ball(&mut rng, g.len(), radius)
        };
        run.max_fault_norm = run.max_fault_norm.max(norm(&f));
        let ef = d.e.mul_vec(&f)?;
        e = ae.iter().zip(&ef).map(|(a, b)| a + b).collect();
    }
    Ok(run)
}
