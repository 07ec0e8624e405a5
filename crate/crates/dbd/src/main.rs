use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dbd::config::{Config, OUT_ENV};
use dbd::pipeline::{with_jobs, Context, Stage};
use dbd::Result;

#[derive(Parser)]
#[command(
    name = "dbd",
    version,
    about = "Ensemble simulation, moment-flow learning and rollout analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML configuration
    #[arg(long, global = true, default_value = "dbd.toml")]
    config: PathBuf,

    /// Output root
    #[arg(long, global = true, env = OUT_ENV, default_value = "out")]
    out: PathBuf,

    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Overrides every seed in the configuration
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Simulate trajectory ensembles for every condition
    Simulate,
    /// Fit the pooled standardizing transform
    Transform,
    /// Maximum-likelihood parameter series per condition
    Estimate,
    /// Regularized time derivatives and training pairs
    Derivative,
    /// Train one network per input mode
    Train,
    /// Integrate the learned flows from each first estimate
    Rollout,
    /// Figure tables and error summaries
    Analyze,
    /// Hash every artifact into report.json
    Report,
    /// Every stage in order
    All,
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = Config::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    let ctx = Context::new(cfg, cli.out)?;
    let stages: Vec<Stage> = match cli.command {
        Command::Simulate => vec![Stage::Simulate],
        Command::Transform => vec![Stage::Transform],
        Command::Estimate => vec![Stage::Estimate],
        Command::Derivative => vec![Stage::Derivative],
        Command::Train => vec![Stage::Train],
        Command::Rollout => vec![Stage::Rollout],
        Command::Analyze => vec![Stage::Analyze],
        Command::Report => vec![Stage::Report],
        Command::All => Stage::ALL.to_vec(),
    };
    with_jobs(cli.jobs, || {
        for s in stages {
            let m = ctx.run(s)?;
            eprintln!("{}: {} outputs", m.stage, m.outputs.len());
        }
        Ok(())
    })?
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dbd: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
