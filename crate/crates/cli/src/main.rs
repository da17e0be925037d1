//! `waydcm`: synthetic corpora, choice-model fits, network training and
//! evaluation from one configuration file.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use waydcm_core::Variant;

use crate::error::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for generation, splitting, shuffling and initialization.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Model variant: LSTM, TrajDCM, WayDCM1 or WayDCM2.
    #[arg(long, global = true)]
    pub variant: Option<String>,
    /// Scene corpus (JSON Lines).
    #[arg(long, global = true)]
    pub scenes: Option<PathBuf>,
    /// Checkpoint base path (without the .json/.bin suffix).
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus and its metadata sidecar.
    Generate,
    /// Fit the plain logit choice model on a labeled corpus.
    FitDcm,
    /// Train one network variant.
    Train,
    /// Evaluate a checkpoint on a corpus.
    Eval,
    /// Train and evaluate all four variants on one split.
    Compare,
    /// Per-alternative explanation of one scene's goal scores.
    Inspect {
        /// Scene identifier.
        #[arg(long)]
        scene_id: String,
    },
}

#[derive(Debug, Parser)]
#[command(name = "waydcm", version, about = "Waypoint-conditioned trajectory prediction with discrete choice goals")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

impl Common {
    pub fn variant(&self) -> CliResult<Option<Variant>> {
        self.variant
            .as_deref()
            .map(|v| v.parse::<Variant>().map_err(|e| CliError::Usage(e.to_string())))
            .transpose()
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("WAYDCM_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .ok_or_else(|| CliError::Usage(format!("WAYDCM_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot configure {n} threads: {e}")))
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    let c = &cli.common;
    match &cli.command {
        Command::Generate => commands::generate(c),
        Command::FitDcm => commands::fit_dcm(c),
        Command::Train => commands::train(c),
        Command::Eval => commands::eval(c),
        Command::Compare => commands::compare(c),
        Command::Inspect { scene_id } => commands::inspect(c, scene_id),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("waydcm: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
