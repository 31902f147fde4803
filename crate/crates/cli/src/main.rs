//! `transrank` command-line entry point.
//!
//! Exit codes: 0 on success, 2 for usage and configuration errors, 3 for
//! malformed data or checkpoint files, 1 for any other runtime failure.

mod commands;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use transrank_core::model::HeadKind;
use transrank_core::train::Framework;
use transrank_core::Error;

#[derive(Debug, Parser)]
#[command(
    name = "transrank",
    version,
    about = "Ranking-based transformation recognition on synthetic video"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic train and test splits into --out.
    GenData(Common),
    /// Pretrain an encoder on a temporal pretext task.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Run a predefined experiment grid instead of a single run.
        #[arg(long, value_parser = ["paper-ablation"])]
        preset: Option<String>,
    },
    /// Finetune a checkpoint end to end on motion categories.
    Finetune(Common),
    /// Train a linear classifier on frozen features of a checkpoint.
    LinearEval(Common),
    /// Nearest-neighbour retrieval with frozen features.
    EvalRetrieval(Common),
    /// Speediness scores of a {1x, 2x} checkpoint at seen and unseen rates.
    Speediness {
        #[command(flatten)]
        common: Common,
        /// Also write a box plot to speediness.svg.
        #[arg(long)]
        svg: bool,
    },
    /// Sync and Order probes on frozen features.
    EvalTemporal(Common),
    /// Collect the CSV outputs found below --out into report.csv.
    Report(Common),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Configuration file with [data], [pretrain] and [transfer] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed of every section, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Checkpoint to evaluate.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Pretext framework.
    #[arg(long)]
    framework: Option<Framework>,
    /// Comma-separated transforms, e.g. "1x,2x,rev,rev2x".
    #[arg(long)]
    transforms: Option<String>,
    /// Temporal head kind.
    #[arg(long)]
    head: Option<HeadKind>,
    /// Dataset directory written by gen-data; generated from [data] when absent.
    #[arg(long)]
    data: Option<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<commands::Usage>().is_some() {
        return 2;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Config { .. }) => 2,
        Some(Error::Format { .. } | Error::Io { .. }) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::GenData(c) => commands::gen_data(&c),
        Command::Pretrain { common, preset } => match preset {
            Some(_) => commands::paper_ablation(&common),
            None => commands::pretrain(&common),
        },
        Command::Finetune(c) => {
            commands::transfer(&c, transrank_core::train::TransferMode::Finetune)
        }
        Command::LinearEval(c) => {
            commands::transfer(&c, transrank_core::train::TransferMode::Linear)
        }
        Command::EvalRetrieval(c) => commands::eval_retrieval(&c),
        Command::Speediness { common, svg } => commands::speediness(&common, svg),
        Command::EvalTemporal(c) => commands::eval_temporal(&c),
        Command::Report(c) => commands::report(&c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
