use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod config;
mod report;
mod svg;

use config::ScenarioConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(#[from] nhmpc_core::Error),
    #[error("{0}")]
    Diverged(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) | CliError::Diverged(_) => 1,
        }
    }
}

/// Tailored-cost MPC for non-holonomic vehicles.
#[derive(Parser)]
#[command(name = "nhmpc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Lie filtration, privileged coordinates and homogeneous approximation.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        /// Print the effective config and exit.
        #[arg(long)]
        dump_config: bool,
    },
    /// Closed-loop simulation with CSV trace and summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Runs two scenarios on the same vehicle and initial state side by side.
    Compare {
        /// Pass twice.
        #[arg(long, num_args = 1, required = true)]
        config: Vec<PathBuf>,
        #[command(flatten)]
        opts: RunOpts,
    },
}

#[derive(Args, Clone)]
struct RunOpts {
    /// Output directory, overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write SVG plots.
    #[arg(long)]
    svg: bool,
    /// Overrides `solver.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Print the effective config and exit.
    #[arg(long)]
    dump_config: bool,
}

fn load(path: &Path, opts: &RunOpts) -> Result<ScenarioConfig, CliError> {
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(out) = &opts.out {
        cfg.output.dir = out.to_string_lossy().into_owned();
    }
    if opts.svg {
        cfg.output.svg = true;
    }
    if let Some(seed) = opts.seed {
        cfg.solver.seed = seed;
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Analyze { config, dump_config } => {
            let cfg = ScenarioConfig::load(&config)?;
            if dump_config {
                print!("{}", cfg.to_toml());
                return Ok(());
            }
            print!("{}", report::analyze(&cfg)?);
            Ok(())
        }
        Command::Run { config, opts } => {
            let cfg = load(&config, &opts)?;
            if opts.dump_config {
                print!("{}", cfg.to_toml());
                return Ok(());
            }
            let out = report::run(&cfg)?;
            print!("{}", out.summary);
            match out.aborted {
                Some(msg) => Err(CliError::Diverged(msg)),
                None => Ok(()),
            }
        }
        Command::Compare { config, opts } => {
            if config.len() != 2 {
                return Err(CliError::Config(format!("compare takes exactly two --config files, got {}", config.len())));
            }
            let a = load(&config[0], &opts)?;
            let b = load(&config[1], &opts)?;
            if opts.dump_config {
                print!("{}\n{}", a.to_toml(), b.to_toml());
                return Ok(());
            }
            print!("{}", report::compare(&a, &b)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nhmpc: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
