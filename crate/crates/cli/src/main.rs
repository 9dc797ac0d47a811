//! `xferdiv`: rank candidate source domains for a target by predicted
//! transfer performance, from corpora to savings report.

mod config;
mod error;
mod stages;
mod workspace;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Config, Overrides};
use error::CliResult;
use workspace::{Stage, Workspace};

#[derive(Parser)]
#[command(name = "xferdiv", version, about)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory holding every artifact and the manifest [default: ./workspace].
    #[arg(long, global = true)]
    workspace: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for data-parallel steps.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Label external corpora, sample splits, and copy embeddings and performances.
    Ingest,
    /// Generate a synthetic benchmark with a known divergence/performance law.
    Synth,
    /// Build representations and the pairwise feature cache.
    Featurize,
    /// Spearman correlation of each feature with macro-F1.
    Correlate,
    /// Leave-one-target-out boosting and per-target source rankings.
    TrainRank,
    /// NDCG and budget curves against the observed performances.
    Evaluate,
    /// Training and end-to-end savings net of measured overhead.
    Budget,
}

impl Command {
    fn stage(self) -> Stage {
        match self {
            Command::Ingest => Stage::Ingest,
            Command::Synth => Stage::Synth,
            Command::Featurize => Stage::Featurize,
            Command::Correlate => Stage::Correlate,
            Command::TrainRank => Stage::TrainRank,
            Command::Evaluate => Stage::Evaluate,
            Command::Budget => Stage::Budget,
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let over = Overrides {
        workspace: cli.workspace,
        seed: cli.seed,
        jobs: cli.jobs,
    };
    let cfg = Config::load(cli.config.as_deref(), &over)?;
    if let Some(jobs) = cfg.jobs {
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let root = cfg.workspace.clone().unwrap_or_else(|| PathBuf::from("workspace"));
    let mut ws = Workspace::open(&root, &cfg)?;
    stages::run(cli.command.stage(), &mut ws, &cfg)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
