use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use specpart::config::RunConfig;
use specpart::error::CliError;
use specpart::run;

#[derive(Parser)]
#[command(name = "specpart", version, about = "Approximate spectral optimal partitions on grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve, partition and diagnose the configured problem.
    Run {
        config: PathBuf,
        /// Output directory, overriding `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Base seed, overriding `solver.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of restarts, overriding `solver.restarts`.
        #[arg(long)]
        restarts: Option<usize>,
    },
    /// Partition and diagnostics of a saved `fields.spf`.
    Audit {
        fields: PathBuf,
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Lowest eigenvalues of the configured domain.
    Eig { config: PathBuf },
}

fn load(path: &Path, out: Option<PathBuf>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(out) = out {
        cfg.output.dir = out;
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            restarts,
        } => {
            let mut cfg = load(&config, out)?;
            if let Some(s) = seed {
                cfg.solver.seed = s;
            }
            if let Some(r) = restarts {
                cfg.solver.restarts = r;
            }
            cfg.validate()?;
            let outcome = run::run(&cfg)?;
            println!("{}", outcome.dir.join("summary.txt").display());
        }
        Command::Audit { fields, config, out } => {
            let cfg = load(&config, out)?;
            let outcome = run::audit(&fields, &cfg)?;
            println!("{}", outcome.dir.join("summary.txt").display());
        }
        Command::Eig { config } => {
            let cfg = load(&config, None)?;
            print!("{}", run::eig(&cfg)?.render());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("specpart: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
