//! Experiment driver: `fedsim <command> --config PATH`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 precondition violation,
//! 4 I/O failure.

pub mod commands;
pub mod config;
pub mod store;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::Context;
pub use config::ExperimentConfig;

use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_PRECONDITION: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const OUT_ENV: &str = "FEDSIM_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "fedsim",
    version,
    about = "Desk-scale federated learning experiments"
)]
pub struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on this value.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output root; the FEDSIM_OUT environment variable takes precedence.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate client datasets, splits, folds and the independent test set.
    Gen,
    /// Train a variant: local:<client>, local:*, central, federated, federated:grid, federated:sweep, all.
    Run { variant: String },
    /// Search local epochs E under a fixed E x R budget.
    Grid,
    /// Compare server strategies on the same plan.
    Sweep,
    /// Evaluate every trained variant on every test set and write tables.
    Eval,
    /// Paired comparisons; pairs are A:B, `locals-mean` averages the local models.
    Compare {
        #[arg(long = "pair")]
        pairs: Vec<String>,
    },
    /// Re-hash every manifest and recompute table cells from eval reports.
    Verify,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::InvalidProfile(_)
        | Error::InvalidTrainConfig(_)
        | Error::NonDivisibleBudget { .. }
        | Error::TooFewCases { .. }
        | Error::BadK { .. } => EXIT_CONFIG,
        Error::Io { .. } | Error::Json { .. } | Error::Format { .. } | Error::Csv(_) => EXIT_IO,
        _ => EXIT_PRECONDITION,
    }
}

fn context(cli: &Cli) -> crate::Result<Context> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config PATH is required".into()))?;
    if !path.exists() {
        return Err(Error::Config(format!(
            "config {} not found",
            path.display()
        )));
    }
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    let root = std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .or_else(|| cli.out.clone())
        .unwrap_or_else(|| cfg.output_dir.clone());
    Ok(Context::new(cfg, &root))
}

pub fn execute(cli: &Cli) -> crate::Result<()> {
    let ctx = context(cli)?;
    match &cli.command {
        Command::Gen => commands::cmd_gen(&ctx),
        Command::Run { variant } => commands::cmd_run(&ctx, variant),
        Command::Grid => commands::cmd_grid(&ctx).map(drop),
        Command::Sweep => commands::cmd_sweep(&ctx).map(drop),
        Command::Eval => commands::cmd_eval(&ctx).map(drop),
        Command::Compare { pairs } => commands::cmd_compare(&ctx, pairs).map(drop),
        Command::Verify => commands::cmd_verify(&ctx),
    }
}

/// Parses arguments, runs one command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.jobs {
        Some(0) => Err(Error::Config("--jobs must be >= 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(&cli)),
            Err(e) => Err(Error::Config(format!("cannot build worker pool: {e}"))),
        },
        None => execute(&cli),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
