//! Batch front end for pagkit: gain sweeps, validation campaigns and
//! invariant-set bound estimates driven by a JSON configuration.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

pub use config::RunConfig;
pub use error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Linpag,
    Nlpag,
    Validate,
    EstimateB,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub grid_n: Option<usize>,
}

/// Loads the configuration, applies flag overrides and runs `command` on a
/// pool of `jobs` workers. Returns the files written.
pub fn run(command: Command, opts: &RunOptions) -> Result<Vec<PathBuf>, CliError> {
    let mut config = RunConfig::load(&opts.config)?;
    if let Some(seed) = opts.seed {
        config.seed = seed;
    }
    if let Some(n) = opts.grid_n {
        config.n = n;
    }
    let out = commands::output_dir(opts.out.as_deref(), &config);
    // the output location does not affect results
    config.output_dir = None;
    let prepared = config.prepare()?;
    std::fs::create_dir_all(&out)?;
    let meta = output::Meta::new(&config);
    let ctx = commands::Context { config, prepared, out, meta };

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = opts.jobs {
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        pool = pool.num_threads(jobs);
    }
    let pool = pool.build().map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    pool.install(|| match command {
        Command::Linpag => commands::linpag(&ctx),
        Command::Nlpag => commands::nlpag(&ctx),
        Command::Validate => commands::validate(&ctx),
        Command::EstimateB => commands::estimate_b_table(&ctx),
    })
}
