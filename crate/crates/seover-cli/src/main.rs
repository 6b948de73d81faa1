//! Command-line frontend for the emotion-recognition pipeline.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 numeric failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use seover_core::corpus::Split;
use seover_core::error::Error;

use config::{load_file, resolve, FileConfig, Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "seover",
    version,
    about = "Conversation emotion recognition over sentence-level emotion orientation vectors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct CommonArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed controlling initialization, shuffling, and splits.
    #[arg(long)]
    seed: Option<u64>,
    /// Context-model input: full orientation vectors or sentence only.
    #[arg(long, value_parser = ["seov", "sentence_only"])]
    fusion: Option<String>,
    /// Emotion label inventory.
    #[arg(long = "label-set", value_parser = ["iemocap", "meld", "custom"])]
    label_set: Option<String>,
    /// Model checkpoint to write (train) or read (other commands).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train stage 1 (encoder + emotion projection) then stage 2
    /// (dialogue context model); write checkpoints and reports.
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Evaluate a checkpoint on one split of the corpus.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Which split to evaluate.
        #[arg(long, value_parser = ["train", "dev", "test"], default_value = "test")]
        split: String,
    },
    /// Label a JSONL file; each record gains `predicted_label` and
    /// `emotion_vector`.
    Predict {
        #[command(flatten)]
        common: CommonArgs,
        /// Input utterances (JSONL). Defaults to the config corpus.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Output path; defaults to <out>/predictions.jsonl.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Export min-max normalized sentence vectors as a TSV matrix.
    #[command(name = "export-heatmap")]
    ExportHeatmap {
        #[command(flatten)]
        common: CommonArgs,
        /// Input utterances (JSONL). Defaults to the config corpus.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Output path; defaults to <out>/heatmap.tsv.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn resolve_config(common: &CommonArgs) -> Result<RunConfig, Error> {
    let file = match &common.config {
        Some(path) => load_file(path)?,
        None => FileConfig::default(),
    };
    let flags = Overrides {
        seed: common.seed,
        fusion: common.fusion.clone(),
        label_set: common.label_set.clone(),
        checkpoint: common.checkpoint.clone(),
        out: common.out.clone(),
    };
    resolve(file, &flags)
}

fn input_path(config: &RunConfig, input: &Option<PathBuf>) -> Result<PathBuf, Error> {
    input
        .clone()
        .or_else(|| config.corpus.clone())
        .ok_or_else(|| Error::Config {
            msg: "no input: pass --input or set [paths].corpus".into(),
        })
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train { common } => commands::cmd_train(&resolve_config(&common)?),
        Command::Eval { common, split } => {
            let config = resolve_config(&common)?;
            let split: Split = split.parse().map_err(|_| Error::Config {
                msg: format!("unknown split {split:?}"),
            })?;
            commands::cmd_eval(&config, split)
        }
        Command::Predict {
            common,
            input,
            output,
        } => {
            let config = resolve_config(&common)?;
            let input = input_path(&config, &input)?;
            let output = output.unwrap_or_else(|| config.out_dir.join("predictions.jsonl"));
            commands::cmd_predict(&config, &input, &output)
        }
        Command::ExportHeatmap {
            common,
            input,
            output,
        } => {
            let config = resolve_config(&common)?;
            let input = input_path(&config, &input)?;
            let output = output.unwrap_or_else(|| config.out_dir.join("heatmap.tsv"));
            commands::cmd_export_heatmap(&config, &input, &output)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_class().code() as u8)
        }
    }
}
