use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use permissible::config::RunConfig;
use permissible::pipeline::{Overrides, Pipeline, Stage, StageOutcome};
use permissible::Result;

/// Permissible strategy sets for stochastic systems learned from data.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate (or copy) the training dataset.
    GenData(Common),
    /// Fit the GP and record its summary.
    FitGp(Common),
    /// Build the transition interval matrix.
    Bounds(Common),
    /// Synthesise the permissible strategy set and its certificate.
    Prune(Common),
    /// Monte Carlo and adversarial validation.
    Validate(Common),
    /// All stages in order, or a single one with --stage.
    Run(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides run.out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root random seed (overrides run.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Safety threshold (overrides problem.p).
    #[arg(long)]
    p: Option<f64>,
    /// Run only this stage: gen-data, fit-gp, bounds, prune or validate.
    #[arg(long)]
    stage: Option<Stage>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn execute(command: Command) -> Result<StageOutcome> {
    let (fixed, common) = match command {
        Command::GenData(c) => (Some(Stage::GenData), c),
        Command::FitGp(c) => (Some(Stage::FitGp), c),
        Command::Bounds(c) => (Some(Stage::Bounds), c),
        Command::Prune(c) => (Some(Stage::Prune), c),
        Command::Validate(c) => (Some(Stage::Validate), c),
        Command::Run(c) => (None, c),
    };
    if let Some(threads) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| permissible::Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    let stage = match (fixed, common.stage) {
        (Some(a), Some(b)) if a != b => {
            return Err(permissible::Error::InvalidArgument(format!(
                "--stage {b} conflicts with the `{a}` subcommand"
            )))
        }
        (a, b) => a.or(b),
    };
    let overrides = Overrides {
        out: common.out,
        seed: common.seed,
        p: common.p,
    };
    let pipeline = Pipeline::new(RunConfig::load(&common.config)?, &overrides)?;
    match stage {
        Some(stage) => pipeline.stage(stage),
        None => {
            let outcome = pipeline.run()?;
            if let Ok(text) = std::fs::read_to_string(pipeline.path(permissible::pipeline::SUMMARY)) {
                print!("{text}");
            }
            Ok(outcome)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(StageOutcome::Infeasible { cell, removals }) => {
            eprintln!("infeasible: state cell {cell} lost every control cell after {removals} removals");
            ExitCode::from(2)
        }
        Ok(StageOutcome::Skipped(reason)) => {
            log::info!("stage skipped: {reason}");
            ExitCode::SUCCESS
        }
        Ok(StageOutcome::Done) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
