//! `efk`: batch front end for event representations, SIF fitting, fusion
//! kernels, annotation tooling and detection metrics.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{ConfigFile, RunConfig};
use crate::error::CliError;

/// Environment variable that caps the worker pool size.
const THREADS_ENV: &str = "EFK_THREADS";

#[derive(Debug, Parser)]
#[command(name = "efk", version, about = "Event-camera representation, fusion and evaluation toolkit")]
struct Cli {
    #[command(flatten)]
    globals: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// JSON file with defaults for the options below
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Accumulation window length in milliseconds [default: 100]
    #[arg(long, global = true)]
    window_ms: Option<f64>,
    /// Temporal slices of the polarity volume [default: 10]
    #[arg(long, global = true)]
    slices: Option<usize>,
    /// Side of the local correlation window, odd [default: 9]
    #[arg(long, global = true)]
    omega: Option<usize>,
    /// Edge operator for the supervision map: sobel, roberts or laplace [default: sobel]
    #[arg(long, global = true)]
    operator: Option<String>,
    /// Minimum ground-truth box diagonal in pixels [default: 30]
    #[arg(long, global = true)]
    min_diag: Option<f64>,
    /// Seed for generated data and weights [default: 0]
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert event files between EVT1 and CSV
    Convert(commands::ConvertArgs),
    /// Build a timestamp frame or polarity volume from an event file
    Represent(commands::RepresentArgs),
    /// Fit a SIF image to the edges of a target frame
    Sif(commands::SifArgs),
    /// Run ERM + LDAM on feature maps and report attention statistics
    AfcmDemo(commands::AfcmArgs),
    /// Score detections against ground truth (mAP50, mAP50:95)
    Eval(commands::EvalArgs),
    /// Warp, clamp and size-filter ground-truth annotations
    Annotate(commands::AnnotateArgs),
    /// Render the synthetic moving-bar scene to an event file
    Simulate(commands::SimulateArgs),
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let g = cli.globals;
    let file = g.config.as_deref().map(ConfigFile::load).transpose()?;
    let flags = ConfigFile {
        window_ms: g.window_ms,
        slices: g.slices,
        omega: g.omega,
        operator: g.operator,
        min_diag: g.min_diag,
        seed: g.seed,
    };
    let cfg = RunConfig::resolve(&flags, file.as_ref())?;
    match cli.command {
        Command::Convert(a) => commands::convert(&a),
        Command::Represent(a) => commands::represent(&a, &cfg),
        Command::Sif(a) => commands::sif(&a, &cfg),
        Command::AfcmDemo(a) => commands::afcm_demo(&a, &cfg),
        Command::Eval(a) => commands::eval(&a, &cfg),
        Command::Annotate(a) => commands::annotate(&a, &cfg),
        Command::Simulate(a) => commands::simulate(&a, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::FAILURE
        }
    }
}
