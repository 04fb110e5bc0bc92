//! Command-line front end: each subcommand runs one pipeline stage from a
//! TOML experiment config, `pipeline` runs them all in order.
//!
//! Exit codes: 0 for success (including a certificate), 2 when synthesis
//! proves the candidate family infeasible, 3 when feasibility stays unknown
//! or a budget runs out, 4 for configuration problems, 1 for anything else.

mod config;
mod stages;

use std::path::PathBuf;

use clap::{ArgAction, Parser, Subcommand};

use config::{ConfigError, ExperimentConfig};
use stages::StageName;

#[derive(Parser)]
#[command(
    name = "roacert",
    version,
    about = "Robust region-of-attraction certification for discrete-time systems"
)]
struct Cli {
    /// Experiment description (TOML).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override the config's output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override the config's master seed.
    #[arg(long, global = true, value_name = "SEED")]
    seed: Option<u64>,
    /// More logging; repeat for debug output.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the residual network and write the dataset and weights.
    Approximate,
    /// Sample residuals and fit the disturbance bound.
    BoundError,
    /// Build the region of interest from forward simulation.
    BuildRoi,
    /// Run the learner/verifier loop until a certificate or a budget.
    Synthesize,
    /// Evaluate level sets, render plots, and cross-check by simulation.
    Roa,
    /// Roll one trajectory of the uncertain closed loop.
    Simulate,
    /// Re-verify a stored certificate against the artifacts.
    Replay,
    /// Run all stages in order.
    Pipeline {
        /// Stop after this stage.
        #[arg(long, value_enum, value_name = "STAGE")]
        stage: Option<StageName>,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 4 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    init_logging(cli.verbose);
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                4
            } else {
                1
            }
        }
    };
    std::process::exit(code);
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default))
        .format_timestamp(None)
        .init();
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    let path = cli
        .config
        .ok_or_else(|| ConfigError("--config <FILE> is required".into()))?;
    let mut cfg = ExperimentConfig::load(&path)?;
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| {
        ConfigError(format!(
            "cannot create output directory {}: {e}",
            cfg.output_dir.display()
        ))
    })?;

    match cli.cmd {
        Cmd::Approximate => stages::approximate(&cfg).map(|()| 0),
        Cmd::BoundError => stages::bound_error(&cfg).map(|()| 0),
        Cmd::BuildRoi => stages::build_roi(&cfg).map(|()| 0),
        Cmd::Synthesize => stages::synthesize(&cfg).map(stages::status_exit_code),
        Cmd::Roa => stages::roa_stage(&cfg).map(|()| 0),
        Cmd::Simulate => stages::simulate_stage(&cfg).map(|()| 0),
        Cmd::Replay => stages::replay_stage(&cfg).map(|()| 0),
        Cmd::Pipeline { stage } => stages::pipeline(&cfg, stage),
    }
}
