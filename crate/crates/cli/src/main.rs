use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod error;

use commands::{CheckKind, Overrides};
use error::CliError;

/// Bivariate Poisson common spatial factor model.
#[derive(Parser)]
#[command(name = "sfactor", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config file; flags override its values.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Chains to run (fit) or worker threads (check recovery).
    #[arg(long, value_name = "K")]
    chains: Option<usize>,
}

impl From<Common> for Overrides {
    fn from(c: Common) -> Self {
        Self { config: c.config, seed: c.seed, out: c.out, chains: c.chains }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model and write chains, diagnostics and a run manifest.
    Fit(Common),
    /// Simulate a dataset with known truth.
    Simulate(Common),
    /// Run a correctness harness.
    Check {
        #[arg(value_enum)]
        kind: CheckKind,
        #[command(flatten)]
        common: Common,
    },
    /// Summarize saved chain files.
    Summarize {
        /// Chain CSV files written by `fit`.
        #[arg(value_name = "CHAIN_FILE")]
        files: Vec<PathBuf>,
        #[arg(long)]
        level: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit(c) => commands::fit(&c.into()),
        Command::Simulate(c) => commands::simulate(&c.into()),
        Command::Check { kind, common } => commands::check(kind, &common.into()),
        Command::Summarize { files, level, common } => commands::summarize_chains(&files, level, &common.into()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
