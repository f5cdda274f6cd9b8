//! Stages of the `fdcert` command line tool.
//!
//! Every stage reads its inputs from disk and writes `<model>.<kind>` files
//! into the output directory:
//!
//! | stage      | writes                                                    |
//! |------------|-----------------------------------------------------------|
//! | `synth`    | `.bundle.toml`                                            |
//! | `codegen`  | `.c`, `.obligations.toml`                                 |
//! | `check`    | `.verdicts.toml`, `.report.txt`                           |
//! | `simulate` | `.trace.csv`, `.metrics.toml`, and `.plot.csv` for detectors |

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use fdcert::autocoder::autocode;
use fdcert::checker::{check_sidecar, Report};
use fdcert::model::{load_model, Model};
use fdcert::sidecar::Sidecar;
use fdcert::simulator::{
    detection_metrics, loop_trace_csv, plot_csv, simulate, simulate_loop, trace_csv, LoopMetrics,
    Scenario,
};
use fdcert::synthesis::{synthesize, synthesize_loop, Bundle, SynthOptions};

/// Whether a stage's result backs the certificates.
#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    Ok,
    /// The stage ran but reports a failure: unproved obligations or
    /// simulation evidence against the certificates.
    Failed(Vec<String>),
}

impl Outcome {
    pub fn is_ok(&self) -> bool {
        matches!(self, Outcome::Ok)
    }

    fn merge(self, other: Outcome) -> Outcome {
        match (self, other) {
            (Outcome::Ok, o) | (o, Outcome::Ok) => o,
            (Outcome::Failed(mut a), Outcome::Failed(b)) => {
                a.extend(b);
                Outcome::Failed(a)
            }
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Ok => write!(f, "ok"),
            Outcome::Failed(why) => write!(f, "failed: {}", why.join("; ")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationConfig {
    pub steps: usize,
    pub seed: u64,
    pub fault_start: Option<usize>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            seed: 1,
            fault_start: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub model: PathBuf,
    pub out: PathBuf,
    /// Checker tolerance.
    pub tol: f64,
    pub simulation: SimulationConfig,
}

impl PipelineConfig {
    pub fn new(model: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            model: model.into(),
            out: out.into(),
            tol: 1e-8,
            simulation: SimulationConfig::default(),
        }
    }
}

/// Files written by one run, in the order they were written.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Written(pub Vec<PathBuf>);

fn output(dir: &Path, name: &str, ext: &str) -> PathBuf {
    dir.join(format!("{name}.{ext}"))
}

fn write(written: &mut Written, path: PathBuf, text: &str) -> Result<()> {
    std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    log::info!("wrote {}", path.display());
    written.0.push(path);
    Ok(())
}

fn prepare(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))
}

fn load(path: &Path) -> Result<Model> {
    load_model(path).with_context(|| format!("cannot load model {}", path.display()))
}

fn stage<T>(name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t0 = Instant::now();
    let r = f().with_context(|| format!("{name} stage"));
    log::info!("{name}: {:.3} s", t0.elapsed().as_secs_f64());
    r
}

pub fn synth(model_path: &Path, out: &Path, written: &mut Written) -> Result<Bundle> {
    stage("synth", || {
        prepare(out)?;
        let model = load(model_path)?;
        let bundle = match &model {
            Model::Detector(m) => Bundle::Detector(synthesize(m, &SynthOptions::default())?),
            Model::Loop(m) => Bundle::Loop(synthesize_loop(m)?),
        };
        write(
            written,
            output(out, model.name(), "bundle.toml"),
            &bundle.to_toml(),
        )?;
        Ok(bundle)
    })
}

fn load_bundle(model: &Model, path: &Path) -> Result<Bundle> {
    let bundle = Bundle::load(path)?;
    let name = match &bundle {
        Bundle::Detector(b) => &b.model,
        Bundle::Loop(b) => &b.model,
    };
    if name != model.name() {
        bail!(
            "bundle {} belongs to `{name}`, not `{}`",
            path.display(),
            model.name()
        );
    }
    Ok(bundle)
}

/// Returns the path of the written sidecar.
pub fn codegen(
    model_path: &Path,
    bundle_path: &Path,
    out: &Path,
    written: &mut Written,
) -> Result<PathBuf> {
    stage("codegen", || {
        prepare(out)?;
        let model = load(model_path)?;
        let bundle = load_bundle(&model, bundle_path)?;
        let (source, sidecar) = autocode(&model, &bundle)?;
        write(written, output(out, model.name(), "c"), &source.c_text)?;
        let path = output(out, model.name(), "obligations.toml");
        write(written, path.clone(), &sidecar)?;
        Ok(path)
    })
}

pub fn check(
    sidecar_path: &Path,
    tol: f64,
    out: &Path,
    written: &mut Written,
) -> Result<(Report, Outcome)> {
    stage("check", || {
        if tol.is_nan() || tol <= 0.0 {
            bail!("tolerance must be positive, got {tol}");
        }
        prepare(out)?;
        let sidecar = Sidecar::load(sidecar_path)?;
        let report = check_sidecar(&sidecar, tol);
        write(
            written,
            output(out, &sidecar.model, "verdicts.toml"),
            &report.to_toml(),
        )?;
        write(
            written,
            output(out, &sidecar.model, "report.txt"),
            &report.to_text(),
        )?;
        let outcome = if report.all_proved() {
            Outcome::Ok
        } else {
            Outcome::Failed(vec![format!(
                "{} of {} obligations failed, {} errors",
                report.failed,
                report.verdicts.len(),
                report.errors
            )])
        };
        Ok((report, outcome))
    })
}

pub fn run_simulation(
    model_path: &Path,
    bundle_path: &Path,
    sim: &SimulationConfig,
    out: &Path,
    written: &mut Written,
) -> Result<Outcome> {
    stage("simulate", || {
        prepare(out)?;
        let model = load(model_path)?;
        let bundle = load_bundle(&model, bundle_path)?;
        let name = model.name().to_string();
        match (&model, &bundle) {
            (Model::Detector(m), Bundle::Detector(b)) => {
                let scenario = Scenario {
                    fault_start: sim.fault_start,
                    ..Scenario::nominal(sim.steps, sim.seed)
                };
                let trace = simulate(m, b, &scenario)?;
                let metrics = detection_metrics(&trace, b);
                write(written, output(out, &name, "trace.csv"), &trace_csv(&trace))?;
                write(
                    written,
                    output(out, &name, "metrics.toml"),
                    &metrics.to_toml(),
                )?;
                write(
                    written,
                    output(out, &name, "plot.csv"),
                    &plot_csv(&trace, b)?,
                )?;
                let v = metrics.violations();
                Ok(if v.is_empty() {
                    Outcome::Ok
                } else {
                    Outcome::Failed(v)
                })
            }
            (Model::Loop(m), Bundle::Loop(b)) => {
                if sim.fault_start.is_some() {
                    bail!("a loop model has no fault to inject");
                }
                let trace = simulate_loop(m, b, sim.steps, sim.seed)?;
                let metrics = LoopMetrics::of(&trace);
                write(
                    written,
                    output(out, &name, "trace.csv"),
                    &loop_trace_csv(&trace),
                )?;
                write(
                    written,
                    output(out, &name, "metrics.toml"),
                    &metrics.to_toml(),
                )?;
                Ok(if metrics.exits == 0 {
                    Outcome::Ok
                } else {
                    Outcome::Failed(vec![format!("{} invariant exits", metrics.exits)])
                })
            }
            _ => bail!("model and bundle are of different kinds"),
        }
    })
}

/// Runs synth, codegen, check and simulate in order. Later stages still run
/// when the checker reports failures.
pub fn pipeline(cfg: &PipelineConfig) -> Result<(Outcome, Written)> {
    let mut written = Written::default();
    synth(&cfg.model, &cfg.out, &mut written)?;
    let bundle_path = written.0.last().cloned().expect("synth writes the bundle");
    let sidecar = codegen(&cfg.model, &bundle_path, &cfg.out, &mut written)?;
    let (_, checked) = check(&sidecar, cfg.tol, &cfg.out, &mut written)?;
    let simulated = run_simulation(
        &cfg.model,
        &bundle_path,
        &cfg.simulation,
        &cfg.out,
        &mut written,
    )?;
    Ok((checked.merge(simulated), written))
}
