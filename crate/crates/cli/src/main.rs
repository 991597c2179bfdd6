use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use porous_duu::{commands, CliError, RunConfig};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Forward,
    TaylorVsMc,
    Spectrum,
    Optimize,
}

/// Risk-averse design of porous insulation components.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    command: Command,
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output.directory`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root random seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (overrides `workers`).
    #[arg(long)]
    workers: Option<usize>,
}

fn run(args: Args) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(out) = args.out {
        cfg.output.directory = out;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = args.workers {
        cfg.workers = workers;
    }
    if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start {} workers: {e}", cfg.workers)))?;
    }
    match args.command {
        Command::Forward => println!("{}", commands::forward(&cfg)?),
        Command::TaylorVsMc => println!("{}", commands::taylor_vs_mc(&cfg)?),
        Command::Spectrum => println!("{}", commands::spectrum(&cfg)?),
        Command::Optimize => {
            let report = commands::optimize(&cfg)?;
            println!("{report}");
            report.check()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
