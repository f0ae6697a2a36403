use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pagkit_cli::{run, Command, RunOptions};

#[derive(Parser)]
#[command(name = "pagkit", version, about = "Period-aware asymptotic gains: sweeps and validation")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Linear gain curves over the period grid
    Linpag(Common),
    /// Conservative nonlinear PAG and average slopes per level and composition
    Nlpag(Common),
    /// Simulated steady states checked against the PAG bound
    Validate(Common),
    /// Heuristic invariant-set bounds per level
    EstimateB(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration
    #[arg(long)]
    config: PathBuf,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads
    #[arg(long, env = "PAGKIT_JOBS")]
    jobs: Option<usize>,
    /// Samples per period
    #[arg(long = "grid-n")]
    grid_n: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Sub::Linpag(c) => (Command::Linpag, c),
        Sub::Nlpag(c) => (Command::Nlpag, c),
        Sub::Validate(c) => (Command::Validate, c),
        Sub::EstimateB(c) => (Command::EstimateB, c),
    };
    let opts = RunOptions {
        config: common.config,
        out: common.out,
        seed: common.seed,
        jobs: common.jobs,
        grid_n: common.grid_n,
    };
    match run(command, &opts) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("pagkit: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
