//! Command-line front end.
//!
//! Exit codes: 0 for a completed experiment, 1 when a step failed at
//! runtime (the partial output is kept and the failure is recorded in it),
//! 2 when the configuration was rejected before any computation started.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use chks::config::{load_config, FlagOverrides};
use chks::error::Error;
use chks::experiments::{cmd_compare, cmd_nconv, cmd_run, cmd_twin};

#[derive(Parser)]
#[command(name = "chks", version, about = "Phase-field tumor growth with conservative nutrient transport")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,

    /// Path to the experiment configuration (INI format).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one configuration value, e.g. --override scheme.dt=1e-4.
    #[arg(long = "override", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory (overrides the configured one).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Seed for the initial-data noise streams (overrides the configured one).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; only the twin experiment uses more than one.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one trajectory and record per-step diagnostics.
    Run,
    /// Run two trajectories from perturbed initial data and report the
    /// continuous-dependence metrics.
    Twin,
    /// Compare the regularized scheme at each truncation level against the
    /// singular reference.
    Nconv,
    /// Run the conservative and historical nutrient laws side by side.
    Compare,
}

fn execute(cli: &Cli) -> chks::error::Result<bool> {
    let path = cli.config.as_ref().ok_or_else(|| Error::ConfigParse {
        line: 0,
        message: "no configuration given (pass --config FILE)".into(),
    })?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::ConfigParse {
        line: 0,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    let flags = FlagOverrides { out: cli.out.clone(), seed: cli.seed };
    let rc = load_config(&text, &cli.overrides, &flags)?;
    match cli.cmd {
        Cmd::Run => cmd_run(&rc),
        Cmd::Twin => cmd_twin(&rc, cli.threads),
        Cmd::Nconv => cmd_nconv(&rc),
        Cmd::Compare => cmd_compare(&rc),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ (Error::ConfigParse { .. } | Error::ConfigRejected { .. })) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
