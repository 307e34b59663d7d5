//! Command-line front end: `synth | train | ablate | inspect`.
//!
//! Exit codes: 0 on success, 2 for configuration or usage errors, 3 for
//! runtime and numeric failures.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{
    ablation_grid, ablation_table, cmd_ablate, cmd_inspect, cmd_synth, cmd_train, default_run_dir, prepare_dataset,
    AblationRow, MetricsFile, TrainRun,
};
pub use config::{AblateConfig, DataConfig, RunConfig};

use crate::error::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "pearnet", version, about = "Graph-attention sleep-stage classifier on single-channel epochs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file (synth, inspect) or run directory (train, ablate).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset.
    Synth(Common),
    /// Cross-validate, then save checkpoint, metrics, loss trace and graph dump.
    Train(Common),
    /// Run the ablation grid.
    Ablate(Common),
    /// Dump the learned graph for one epoch.
    Inspect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0)]
        epoch: usize,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let cfg = match &common.config {
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            Error::Io { path, source } => Error::config("--config", format!("{}: {source}", path.display())),
            other => other,
        })?,
        None => RunConfig::default(),
    };
    Ok(match common.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

pub fn execute(cli: Cli) -> Result<()> {
    let log = |m: &str| eprintln!("{m}");
    match cli.command {
        Command::Synth(c) => {
            let cfg = load_config(&c)?;
            let out = c.out.clone().or_else(|| cfg.data.path.clone()).unwrap_or_else(|| PathBuf::from("synthetic.bin"));
            let data = cmd_synth(&cfg, &out, c.force)?;
            eprintln!("wrote {} epochs to {}", data.len(), out.display());
        }
        Command::Train(c) => {
            let cfg = load_config(&c)?;
            let dir = c.out.clone().unwrap_or_else(|| default_run_dir(&cfg));
            let run = cmd_train(&cfg, &dir, c.force, log)?;
            print!("{}", run.outcome.report.to_table());
            eprintln!("artifacts in {}", run.dir.display());
        }
        Command::Ablate(c) => {
            let cfg = load_config(&c)?;
            let dir = c.out.clone().unwrap_or_else(|| default_run_dir(&cfg));
            let rows = cmd_ablate(&cfg, &dir, c.force, log)?;
            print!("{}", ablation_table(&rows));
            eprintln!("artifacts in {}", dir.display());
        }
        Command::Inspect { common, checkpoint, dataset, epoch } => {
            let cfg = load_config(&common)?;
            let out = common.out.clone().unwrap_or_else(|| default_run_dir(&cfg).join(commands::GRAPH_DUMP));
            let dump = cmd_inspect(&cfg, &checkpoint, &dataset, epoch, &out, common.force)?;
            eprintln!("wrote {} nodes to {}", dump.nodes.len(), out.display());
        }
    }
    Ok(())
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
