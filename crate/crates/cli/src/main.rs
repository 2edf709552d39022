use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use coachrank_cli::{
    cmd_centrality, cmd_rank, cmd_sensitivity, cmd_synth, cmd_validate, CliError, RunConfig,
    EXIT_FATAL,
};
use serde::Serialize;

/// Coach rankings from game results.
#[derive(Debug, Parser)]
#[command(name = "coachrank", version)]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice in the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses one per core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse inputs and report row errors and season coverage.
    Validate,
    /// Fit every selected season and write rankings.
    Rank,
    /// Compare fits before and after perturbing one game.
    Sensitivity {
        /// Perturbation file (one request or a list).
        perturbations: PathBuf,
        /// Report path; defaults to `<output_dir>/sensitivity.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic season from a spec file.
    Synth { spec: PathBuf, out_dir: PathBuf },
    /// Compute centralities only.
    Centrality,
}

fn print_json<T: Serialize>(value: &T) {
    match serde_json::to_string_pretty(value) {
        Ok(s) => println!("{s}"),
        Err(e) => eprintln!("error: {e}"),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    RunConfig::load(path)
}

fn run(cli: &Cli) -> Result<i32, CliError> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Validate => {
            let report = cmd_validate(&load_config(cli)?);
            for issue in &report.errors {
                eprintln!("error: {}", issue.message);
            }
            for s in &report.seasons {
                if !s.unmatched_teams.is_empty() {
                    eprintln!(
                        "warning: {}: no coach for {} (fixed coach skill)",
                        s.season,
                        s.unmatched_teams.join(", ")
                    );
                }
            }
            print_json(&report);
            Ok(report.exit_code())
        }
        Command::Rank => {
            let summary = cmd_rank(&load_config(cli)?, seed, cli.jobs)?;
            for f in &summary.failures {
                eprintln!("season {} failed: {}", f.season, f.error);
            }
            print_json(&summary);
            Ok(summary.exit_code())
        }
        Command::Sensitivity { perturbations, out } => {
            let reports = cmd_sensitivity(&load_config(cli)?, perturbations, out.as_deref(), seed)?;
            print_json(&reports);
            Ok(0)
        }
        Command::Synth { spec, out_dir } => {
            print_json(&cmd_synth(spec, out_dir, cli.seed)?);
            Ok(0)
        }
        Command::Centrality => {
            let summary = cmd_centrality(&load_config(cli)?)?;
            for f in &summary.failures {
                eprintln!("season {} failed: {}", f.season, f.error);
            }
            print_json(&summary);
            Ok(summary.exit_code())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    };
    ExitCode::from(u8::try_from(code).unwrap_or(EXIT_FATAL as u8))
}
