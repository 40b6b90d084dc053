mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gain_core::GainError;

use crate::config::RunConfig;

/// Gazetteer-adapted integration network: data, training, evaluation and experiments.
#[derive(Debug, Parser)]
#[command(name = "gain", version)]
pub struct Cli {
    /// JSON run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory for outputs.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build, query and measure gazetteers.
    #[command(subcommand)]
    Gazetteer(GazetteerCmd),
    /// Generate, augment and check CoNLL data.
    #[command(subcommand)]
    Data(DataCmd),
    /// Pre-train the encoder with a temporary tagging head.
    Pretrain(PretrainArgs),
    /// Stage 1: align the gazetteer network with the frozen encoder.
    Adapt(AdaptArgs),
    /// Stage 2: joint training with the fused representation.
    Train(TrainArgs),
    /// Score a checkpoint against gold data and export predictions.
    Eval(EvalArgs),
    /// Combine exported predictions by averaged logits or weighted vote.
    Ensemble(EnsembleArgs),
    /// GAIN against the encoder-only baseline on the synthetic gazetteer task.
    CompareBaseline,
    /// Macro-F1 and mean σ(λ) across gazetteer coverage rates.
    SweepCoverage(SweepArgs),
    /// Finite-difference check of every differentiable op and the stage-2 loss.
    Gradcheck,
}

#[derive(Debug, Subcommand)]
pub enum GazetteerCmd {
    /// Collect entity surfaces from labelled data and TSV gazetteers.
    Build {
        /// CoNLL files whose entities are added.
        #[arg(long, num_args = 1..)]
        data: Vec<PathBuf>,
        /// Gazetteer TSV files to merge in.
        #[arg(long, num_args = 1..)]
        tsv: Vec<PathBuf>,
    },
    /// Print the one-hot match features of a token sequence.
    Match {
        #[arg(long)]
        gazetteer: PathBuf,
        /// Whitespace-separated tokens.
        #[arg(long)]
        tokens: String,
        /// `longest` or `all`; the model config's policy by default.
        #[arg(long, value_parser = commands::parse_enum::<gain_core::gazetteer::MatchPolicy>)]
        policy: Option<gain_core::gazetteer::MatchPolicy>,
        #[arg(long)]
        fold_case: bool,
        /// Only show columns holding a 1.
        #[arg(long)]
        compact: bool,
    },
    /// Per-label coverage of a gazetteer over labelled data.
    Coverage {
        #[arg(long)]
        gazetteer: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum DataCmd {
    /// Template-based synthetic sentences.
    Synth {
        #[arg(long)]
        sentences: Option<usize>,
        /// `rich` or `low`.
        #[arg(long, value_parser = commands::parse_enum::<gain_core::corpus::ContextMode>)]
        context: Option<gain_core::corpus::ContextMode>,
        /// Fill slots with fresh random strings.
        #[arg(long)]
        fresh: bool,
        /// Entity source when not using fresh strings.
        #[arg(long)]
        gazetteer: Option<PathBuf>,
    },
    /// Replace every entity with a random same-label gazetteer surface.
    Augment {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        gazetteer: PathBuf,
    },
    /// Parse a CoNLL file and report its statistics.
    Validate {
        #[arg(long)]
        data: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Tagged pre-training corpus.
    #[arg(long)]
    pub data: PathBuf,
    /// Further files whose tokens enter the vocabulary.
    #[arg(long, num_args = 1..)]
    pub vocab_data: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelOverride {
    /// Rebuild a pre-trained checkpoint with this classifier (`softmax`, `crf`, `span`).
    #[arg(long, value_parser = commands::parse_enum::<gain_core::model::ClassifierKind>)]
    pub classifier: Option<gain_core::model::ClassifierKind>,
    /// Rebuild a pre-trained checkpoint with this integration (`concat`, `weighted_sum`, `none`).
    #[arg(long, value_parser = commands::parse_enum::<gain_core::model::IntegrationMode>)]
    pub integration: Option<gain_core::model::IntegrationMode>,
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub model: ModelOverride,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Validation data for best-epoch selection.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub gazetteer: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelOverride,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub gazetteer: Option<PathBuf>,
    /// Name recorded in exported predictions (checkpoint file stem by default).
    #[arg(long)]
    pub model_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    /// Prediction files (JSON lines), one per member.
    #[arg(long, num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_parser = commands::parse_enum::<gain_core::ensemble::EnsembleMode>, default_value = "avg-logits")]
    pub mode: gain_core::ensemble::EnsembleMode,
    /// Comma-separated member weights for `vote` (all 1 by default).
    #[arg(long, value_delimiter = ',')]
    pub weights: Vec<f64>,
    /// Gold CoNLL data to score the combined output against.
    #[arg(long)]
    pub gold: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated coverage rates (the config's `sweep_rates` by default).
    #[arg(long, value_delimiter = ',')]
    pub rates: Vec<f64>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(g) = cause.downcast_ref::<GainError>() {
            return match g {
                GainError::Config(_) | GainError::Contract(_) => 1,
                GainError::Data(_) | GainError::Io(_) => 2,
                GainError::Numeric(_) => 3,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<serde_json::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GAIN_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let run = RunConfig::load(cli.config.as_deref(), cli.seed).and_then(|cfg| {
        cfg.validate()?;
        commands::run(&cli, cfg)
    });
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
