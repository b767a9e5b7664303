//! The `qorseek` command line: configuration, artifact files, and the
//! `dse`, `pairs`, `train-rm`, `grpo` and `report` pipelines.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod report;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{load_kernels, Overrides, RunConfig};
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "qorseek", version, about = "QoR-aware reward modeling and GRPO simulation for HLS pragma design")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Kernel descriptor files or glob patterns.
    #[arg(long, global = true, num_args = 1..)]
    pub kernels: Option<Vec<String>>,

    /// Evaluations per kernel in `dse`.
    #[arg(long, global = true)]
    pub budget: Option<usize>,

    /// Reward-model training epochs.
    #[arg(long, global = true)]
    pub epochs: Option<usize>,

    /// GRPO steps.
    #[arg(long, global = true)]
    pub steps: Option<usize>,

    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Bayesian DSE per kernel: corpus and hypervolume logs.
    Dse,
    /// Two-tier preference pairs from the corpus.
    Pairs,
    /// Train the comparative reward model on corpus pairs.
    TrainRm,
    /// GRPO simulation with the uncertainty-gated QoR reward.
    Grpo,
    /// Summarize GRPO telemetry.
    Report,
}

impl Cli {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            kernels: self.kernels.clone(),
            budget: self.budget,
            epochs: self.epochs,
            steps: self.steps,
            out: self.out.clone(),
        }
    }
}

pub fn run(command: Command, cfg: &RunConfig) -> Result<String> {
    match command {
        Command::Dse => commands::cmd_dse(cfg),
        Command::Pairs => commands::cmd_pairs(cfg),
        Command::TrainRm => commands::cmd_train_rm(cfg),
        Command::Grpo => commands::cmd_grpo(cfg),
        Command::Report => report::cmd_report(cfg),
    }
}

/// Parse `args`, run, print, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    main_with_writers(args, &mut std::io::stdout(), &mut std::io::stderr())
}

/// [`main_with_args`] with the command's output and diagnostics sent to `out` and `err`.
pub fn main_with_writers<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return error::EXIT_INVALID_CONFIG;
            }
            let _ = write!(out, "{}", e.render());
            return error::EXIT_OK;
        }
    };
    let result = RunConfig::load(cli.config.as_deref(), &cli.overrides()).and_then(|cfg| run(cli.command, &cfg));
    match result {
        Ok(text) => {
            let _ = write!(out, "{text}");
            error::EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(err, "qorseek: {e}");
            e.exit_code()
        }
    }
}
