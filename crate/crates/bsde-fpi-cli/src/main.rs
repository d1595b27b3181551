//! Batch driver: JSON config in, CSV and report files out. Exit codes:
//! 0 success, 1 numerical or guard failure, 2 configuration/IO/usage failure.

mod commands;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Command failure carrying its exit class: config/IO misuse is cheap to fix
/// and exits 2; a numerical or guard trip on a well-formed run exits 1.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Numerical(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) | Failure::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<bsde_fpi::Error> for Failure {
    fn from(e: bsde_fpi::Error) -> Self {
        use bsde_fpi::Error as E;
        match &e {
            // Deterministic consequences of the configuration itself.
            E::Argument(_) | E::Dimension(_) | E::LevelRange(_) | E::Malformed(_)
            | E::Capacity { .. } => Failure::Config(e.to_string()),
            // Guards tripping on a well-formed run.
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "bsde-fpi",
    version,
    about = "Backward stochastic fixed-point solves on exact branching lattices"
)]
struct Cli {
    /// JSON run configuration (required by every subcommand).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; overrides outputs.directory from the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Permit solves on windows beyond the certified contraction horizon.
    #[arg(long, global = true)]
    override_horizon: bool,
    /// Suppress progress output (errors still go to stderr).
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the certified contraction step bound for the configured problem.
    Bound,
    /// Solve the configured problem and write solution/convergence files.
    Solve,
    /// Re-read a written solution and check the integral equations.
    Verify,
    /// Cross-validate the lattice solve against the deterministic PDE march.
    PdeCheck,
    /// Refinement study across a list of grid resolutions.
    Study,
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Failure::Config("--config PATH is required".into()))?;
    let cfg = config::RunConfig::load(path)?;
    let out_dir = cli
        .out
        .clone()
        .or_else(|| cfg.outputs.directory.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    match cli.command {
        Command::Bound => commands::bound(&cfg, cli.quiet),
        Command::Solve => commands::solve(&cfg, &out_dir, cli.override_horizon, cli.quiet),
        Command::Verify => commands::verify(&cfg, &out_dir, cli.quiet),
        Command::PdeCheck => commands::pde_check(&cfg, &out_dir, cli.override_horizon, cli.quiet),
        Command::Study => commands::study(&cfg, &out_dir, cli.override_horizon, cli.quiet),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    bsde_fpi::par::init_workers();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.code())
        }
    }
}
