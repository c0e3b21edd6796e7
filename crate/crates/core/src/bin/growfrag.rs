use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use growfrag::cli::{self, CliOptions, Command};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Validate,
    Malthus,
    Pde,
    Criteria,
    All,
}

/// Malthus exponent, profile and criteria for growth-fragmentation models.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    #[arg(value_enum)]
    command: Cmd,
    /// TOML model and run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides run.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; outputs do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (default run.out, then ./out).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { cli::EXIT_CONFIG as u8 } else { 0 });
        }
    };
    let command = match args.command {
        Cmd::Validate => Command::Validate,
        Cmd::Malthus => Command::Malthus,
        Cmd::Pde => Command::Pde,
        Cmd::Criteria => Command::Criteria,
        Cmd::All => Command::All,
    };
    let opts = CliOptions { config: args.config, seed: args.seed, workers: args.workers, out: args.out };
    ExitCode::from(cli::run(command, &opts) as u8)
}
