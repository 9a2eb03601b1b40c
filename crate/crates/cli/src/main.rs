//! `elastocal`: design, evaluate and validate elastostatic calibration plans.

mod commands;
mod config;
mod error;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use elastocal::criteria::CriterionKind;

use crate::commands::Context;
use crate::config::RunConfig;
use crate::error::CliError;
use crate::report::Format;

#[derive(Parser)]
#[command(name = "elastocal", version, about = "Design of elastostatic calibration experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Optimise a plan for the configured test pose.
    Design,
    /// Score a plan with every quality criterion.
    Evaluate,
    /// Monte Carlo validation of a plan's predicted accuracy.
    Simulate,
    /// Estimate compliances from a measurement CSV.
    Identify,
    /// Corrected joint targets for the test pose and load.
    Compensate,
    /// Designed plan against random feasible plans.
    Compare,
}

#[derive(Args)]
struct Flags {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Number of calibration experiments.
    #[arg(long, global = true)]
    m: Option<usize>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Optimiser starts.
    #[arg(long, global = true)]
    starts: Option<usize>,
    /// Monte Carlo trials.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Restrict `evaluate` to one criterion (A_opt, D_opt, ..., TestPose).
    #[arg(long, global = true)]
    criterion: Option<String>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Plan file (JSON) for evaluate and simulate.
    #[arg(long, global = true)]
    plan: Option<PathBuf>,
    /// Measurement log (CSV) for identify.
    #[arg(long, global = true)]
    measurements: Option<PathBuf>,
    /// Compliance file (JSON with `joints` and `k_hat`) for compensate and simulate.
    #[arg(long, global = true)]
    compliance: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

fn context(flags: Flags) -> Result<Context, CliError> {
    let mut config = match &flags.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::from_json("{}")?,
    };
    if let Some(m) = flags.m {
        config.m = m;
    }
    if let Some(seed) = flags.seed {
        config.seed = seed;
    }
    if let Some(starts) = flags.starts {
        config.starts = Some(starts);
    }
    if let Some(trials) = flags.trials {
        config.trials = trials;
    }
    if let Some(out) = flags.out {
        config.output_dir = out;
    }
    config.validate()?;
    let criterion = flags
        .criterion
        .as_deref()
        .map(|s| s.parse::<CriterionKind>())
        .transpose()
        .map_err(|e| CliError::Config(e.to_string()))?;
    for p in [&flags.plan, &flags.measurements, &flags.compliance].into_iter().flatten() {
        if !p.is_file() {
            return Err(CliError::Config(format!("input file {} does not exist", p.display())));
        }
    }
    Ok(Context {
        config,
        format: flags.format,
        criterion,
        plan: flags.plan,
        measurements: flags.measurements,
        compliance: flags.compliance,
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.flags.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let ctx = context(cli.flags)?;
    match cli.command {
        Command::Design => commands::design(&ctx),
        Command::Evaluate => commands::evaluate(&ctx),
        Command::Simulate => commands::simulate(&ctx),
        Command::Identify => commands::identify(&ctx),
        Command::Compensate => commands::compensate_cmd(&ctx),
        Command::Compare => commands::compare(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
