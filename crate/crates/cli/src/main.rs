//! `qudit-net`: run heralded-entanglement campaigns, analyze their logs and
//! model entanglement rates.
//!
//! Exit status: 0 on success, 1 for usage or configuration errors, 2 for
//! runtime failures.

mod commands;
mod config;
mod logio;
mod tables;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Failure, Outcome, Overrides};

/// Default output root; each subcommand writes to `<root>/<subcommand>`.
const OUT_ENV: &str = "QUDIT_NET_OUT";
const DEFAULT_OUT_ROOT: &str = "qudit-net-out";

#[derive(Parser, Debug)]
#[command(name = "qudit-net", version, about = "Heralded qudit entanglement simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory [default: $QUDIT_NET_OUT/<subcommand>, or ./qudit-net-out/<subcommand>].
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Qudit dimension; replaces `experiment.d`.
    #[arg(long, global = true, value_name = "D")]
    dimension: Option<u32>,
    /// Stop after this many attempts.
    #[arg(long, global = true, value_name = "N", conflicts_with = "successes",
          value_parser = clap::value_parser!(u64).range(1..))]
    attempts: Option<u64>,
    /// Stop at this many successful, unvetoed heralds.
    #[arg(long, global = true, value_name = "N", value_parser = clap::value_parser!(u64).range(1..))]
    successes: Option<u64>,
    /// Rephase parity data with the fitted differential field.
    #[arg(long, global = true)]
    feed_forward: bool,
    /// Overwrite existing logs.
    #[arg(long, global = true)]
    force: bool,
    /// Worker threads [default: available cores].
    #[arg(long, global = true, value_name = "N", value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a campaign and write its event log and summary.
    Simulate,
    /// Estimate states, parity curves and field drift from logs.
    Analyze {
        /// A log file, a run directory, or a directory searched for `.jsonl` logs.
        input: PathBuf,
        /// Abort on the first corrupt record instead of skipping it.
        #[arg(long)]
        strict: bool,
    },
    /// Report detection probabilities and entanglement rate versus dimension.
    Rate,
    /// Run one campaign per value of `[sweep]` and tabulate them.
    Sweep,
    /// Parse and check the configuration without running anything.
    ValidateConfig,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Analyze { .. } => "analyze",
            Command::Rate => "rate",
            Command::Sweep => "sweep",
            Command::ValidateConfig => "validate-config",
        }
    }
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| {
        let root = std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT), PathBuf::from);
        root.join(cli.command.name())
    })
}

fn run(cli: &Cli) -> Outcome {
    let file = commands::load_config(cli.config.as_deref())?;
    let ov = Overrides {
        seed: cli.seed,
        dimension: cli.dimension,
        attempts: cli.attempts,
        successes: cli.successes,
        jobs: cli.jobs.map(|j| j as usize),
        feed_forward: cli.feed_forward,
    };
    let out = out_dir(cli);
    match &cli.command {
        Command::Simulate => commands::simulate(&file, &ov, &out, cli.force),
        Command::Analyze { input, strict } => commands::analyze(input, &file, &ov, &out, *strict),
        Command::Rate => commands::rate(&file, &ov, &out),
        Command::Sweep => commands::sweep(&file, &ov, &out, cli.force),
        Command::ValidateConfig => {
            if cli.config.is_none() {
                return Err(Failure::Usage(anyhow::anyhow!("validate-config needs --config")));
            }
            commands::validate_config(&file, &ov)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
