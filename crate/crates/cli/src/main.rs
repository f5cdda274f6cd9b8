use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fdcert_cli::{
    check, codegen, pipeline, run_simulation, synth, Outcome, PipelineConfig, SimulationConfig,
    Written,
};

/// Exit status when a stage reports unproved obligations or evidence
/// against the certificates.
const EXIT_FAILED: u8 = 1;
/// Exit status when a stage cannot run at all.
const EXIT_ERROR: u8 = 3;

#[derive(Parser)]
#[command(
    name = "fdcert",
    version,
    about = "Certified autocoding for observer-based fault detectors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Sim {
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// First step with degraded actuators; no fault when absent.
    #[arg(long)]
    fault_start: Option<usize>,
}

impl Sim {
    fn config(&self) -> SimulationConfig {
        SimulationConfig {
            steps: self.steps,
            seed: self.seed,
            fault_start: self.fault_start,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the certificate bundle of a model.
    Synth {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Generate annotated C and the obligation sidecar.
    Codegen {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Re-check every obligation of a sidecar.
    Check {
        #[arg(long)]
        sidecar: PathBuf,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Simulate the closed loop and export trace, metrics and plot data.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[command(flatten)]
        sim: Sim,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// All of the above.
    Pipeline {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[command(flatten)]
        sim: Sim,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn run(cmd: Command) -> anyhow::Result<Outcome> {
    let mut written = Written::default();
    let outcome = match cmd {
        Command::Synth { model, out } => {
            synth(&model, &out, &mut written)?;
            Outcome::Ok
        }
        Command::Codegen { model, bundle, out } => {
            codegen(&model, &bundle, &out, &mut written)?;
            Outcome::Ok
        }
        Command::Check { sidecar, tol, out } => {
            let (report, outcome) = check(&sidecar, tol, &out, &mut written)?;
            print!("{}", report.to_text());
            outcome
        }
        Command::Simulate {
            model,
            bundle,
            sim,
            out,
        } => run_simulation(&model, &bundle, &sim.config(), &out, &mut written)?,
        Command::Pipeline {
            model,
            tol,
            sim,
            out,
        } => {
            let cfg = PipelineConfig {
                tol,
                simulation: sim.config(),
                ..PipelineConfig::new(model, out)
            };
            let (outcome, w) = pipeline(&cfg)?;
            written = w;
            outcome
        }
    };
    for p in &written.0 {
        println!("{}", p.display());
    }
    Ok(outcome)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FDCERT_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(failed) => {
            eprintln!("fdcert: {failed}");
            ExitCode::from(EXIT_FAILED)
        }
        Err(e) => {
            eprintln!("fdcert: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
