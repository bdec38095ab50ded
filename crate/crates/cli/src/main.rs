//! `codcl`: the counterfactual augmentation pipeline as a set of subcommands
//! sharing one declarative config file and one output directory.

mod artifacts;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use codcl::config::RunConfig;

use artifacts::OutDir;
use commands::Ctx;

#[derive(Parser)]
#[command(name = "codcl", version, about = "Counterfactual augmentation for temporal link prediction")]
struct Cli {
    /// Flat `section.key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `train.seeds` with a single seed; also seeds `synth`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory holding every artifact and manifest.
    #[arg(long, global = true, default_value = "codcl-out")]
    out: PathBuf,
    /// Also write per-query score/label CSVs.
    #[arg(long, global = true)]
    emit_csv: bool,
    /// Also dump model parameters as nested JSON arrays.
    #[arg(long, global = true)]
    export_json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse an event CSV and cache the graph.
    Ingest {
        /// Event CSV; defaults to `dataset.path`.
        path: Option<PathBuf>,
    },
    /// Fit the treatment threshold on the training split and write treatments.csv.
    Treat,
    /// Search counterfactual pairs for every training event and write augment.csv.
    Augment,
    /// Train one model per seed and write checkpoints plus the test report.
    Train,
    /// Re-score the test split from saved checkpoints.
    Eval,
    /// Run the full pipeline over the `sweep.*` grid.
    Sweep,
    /// Run the full model and its four single-switch ablations.
    Ablate,
    /// Generate a planted-treatment synthetic dataset and cache its graph.
    Synth,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Treat => "treat",
            Command::Augment => "augment",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Sweep => "sweep",
            Command::Ablate => "ablate",
            Command::Synth => "synth",
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("config {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.experiment.seeds = vec![seed];
    }
    if let Ok(v) = std::env::var("CODCL_WORKERS") {
        let cap: usize = v.trim().parse().with_context(|| format!("CODCL_WORKERS must be a positive integer, got `{v}`"))?;
        if cap == 0 {
            anyhow::bail!("CODCL_WORKERS must be a positive integer, got `{v}`");
        }
        let w = &mut cfg.experiment.workers;
        *w = if *w == 0 { cap } else { (*w).min(cap) };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let ctx = Ctx {
        cfg: load_config(cli)?,
        out: OutDir::create(cli.out.clone())?,
        seed: cli.seed,
        emit_csv: cli.emit_csv,
        export_json: cli.export_json,
    };
    match &cli.command {
        Command::Ingest { path } => commands::ingest(&ctx, path.as_deref()),
        Command::Treat => commands::treat(&ctx),
        Command::Augment => commands::augment_cmd(&ctx),
        Command::Train => commands::train(&ctx),
        Command::Eval => commands::eval(&ctx),
        Command::Sweep => commands::sweep(&ctx),
        Command::Ablate => commands::ablate(&ctx),
        Command::Synth => commands::synth(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: stage `{}` failed: {e:#}", cli.command.name());
            ExitCode::FAILURE
        }
    }
}
