//! `kerm`: knowledge-graph distillation and re-ranking pipeline driven by a
//! single TOML config. Each command reads its inputs from the config and
//! earlier stages' artifacts from the working directory, and is skipped when
//! its stamp shows nothing changed.

mod commands;
mod config;
mod error;
mod workdir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kerm::model::Mode;
use kerm::synth::SynthConfig;

use crate::commands::Context;
use crate::config::PipelineConfig;
use crate::error::Result;

#[derive(Parser)]
#[command(name = "kerm", version, about = "Knowledge-enhanced passage re-ranking pipeline")]
struct Cli {
    /// Pipeline config file.
    #[arg(short, long, global = true, default_value = "kerm.toml")]
    config: PathBuf,

    /// Rerun stages even when their stamps are current.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Knowledge-graph loading and embedding.
    #[command(subcommand)]
    Kg(KgCommand),
    /// Graph pruning and meta-graph construction.
    #[command(subcommand)]
    Distill(DistillCommand),
    /// Fine-tune the re-ranker on the training candidates.
    Train {
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score and reorder the evaluation candidates.
    Rerank,
    /// MRR@10, MAP@10 and MAP@30 of the re-ranked run.
    Eval,
    /// Average meta-graph edge count and edge score.
    Stats,
    /// Every stage in order.
    Pipeline,
    /// Write a synthetic corpus and a matching config.
    Synth(SynthArgs),
}

#[derive(Subcommand)]
enum KgCommand {
    /// Parse, normalize and merge the triples.
    Build,
    /// Train translation embeddings.
    Transe,
}

#[derive(Subcommand)]
enum DistillCommand {
    /// Keep the top-Π most reliable edges per head entity.
    Prune {
        #[arg(long)]
        pi: Option<usize>,
    },
    /// Build a meta-graph for every candidate pair.
    Build {
        /// Maximum path length in edges.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        max_frontier: Option<usize>,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    queries: usize,
    #[arg(long, default_value_t = 10)]
    candidates: usize,
    #[arg(long, default_value_t = 100)]
    triplets: usize,
    #[arg(long, default_value_t = 11)]
    seed: u64,
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Synth(a) = &cli.command {
        let cfg = SynthConfig {
            queries: a.queries,
            candidates: a.candidates,
            group_size: a.queries,
            triplets: a.triplets,
            seed: a.seed,
            ..Default::default()
        };
        return commands::synth(&a.out, &cfg);
    }

    let mut cfg = PipelineConfig::load(&cli.config)?;
    match &cli.command {
        Command::Distill(DistillCommand::Prune { pi: Some(pi) }) => cfg.distill.pi = *pi,
        Command::Distill(DistillCommand::Build { k, max_frontier }) => {
            if let Some(k) = k {
                cfg.distill.max_hops = *k;
            }
            if let Some(f) = max_frontier {
                cfg.distill.max_frontier = *f;
            }
        }
        Command::Train { mode, epochs } => {
            if let Some(m) = mode {
                cfg.model.mode = *m;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
        }
        _ => {}
    }
    let ctx = Context::open(cfg, cli.force)?;
    match cli.command {
        Command::Kg(KgCommand::Build) => ctx.kg_build(),
        Command::Kg(KgCommand::Transe) => ctx.kg_transe(),
        Command::Distill(DistillCommand::Prune { .. }) => ctx.distill_prune(),
        Command::Distill(DistillCommand::Build { .. }) => ctx.distill_build(),
        Command::Train { .. } => ctx.train(),
        Command::Rerank => ctx.rerank(),
        Command::Eval => ctx.eval(),
        Command::Stats => ctx.stats(),
        Command::Pipeline => ctx.pipeline(),
        Command::Synth(_) => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage mistakes are validation errors
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

