//! Command-line front end: feature extraction, toy data, training,
//! fine-tuning, evaluation and gradient checks.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dcasenet::model::Variant;
use dcasenet::task::Task;
use dcasenet::training::StepMode;

#[derive(Parser, Debug)]
#[command(name = "dcasenet", version, about = "Joint scene classification, audio tagging and event detection")]
pub struct Cli {
    /// Worker threads for feature extraction (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Extract log-mel features from a WAV file or every file of a manifest.
    Features(FeaturesArgs),
    /// Write the synthetic toy corpus and its manifests.
    Synth(SynthArgs),
    /// Joint (or single-task) training from a run config.
    Train(TrainArgs),
    /// Fine-tune a jointly trained checkpoint on one task.
    Finetune(FinetuneArgs),
    /// Score a checkpoint, or a predictions file, against a manifest.
    Evaluate(EvaluateArgs),
    /// Finite-difference check of the full multi-task loss gradient.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct FeaturesArgs {
    /// Single WAV file to featurize.
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    pub input: Option<PathBuf>,
    /// Manifest whose files are all featurized.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output cache file (with --input) or directory (with --manifest).
    #[arg(long)]
    pub out: PathBuf,
    /// Feature config JSON; defaults to 128 bands, 40 ms window, 20 ms hop at 24 kHz.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of mel bands (overrides the config).
    #[arg(long)]
    pub n_mels: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory for audio and manifests.
    #[arg(long)]
    pub out: PathBuf,
    /// Toy corpus description (JSON); defaults to 4 scenes, 6 tags, 4 event classes.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Random seed (overrides the spec).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Prefix for file and manifest names.
    #[arg(long, default_value = "")]
    pub prefix: String,
}

/// Command-line overrides of run config keys.
#[derive(Args, Debug, Clone, Default)]
pub struct Overrides {
    /// Epochs to run.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Iterations per epoch.
    #[arg(long)]
    pub iterations_per_epoch: Option<u64>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Seed for initialization, sampling, mix-up and dropout.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Mix-up Beta parameter.
    #[arg(long)]
    pub mixup_alpha: Option<f64>,
    /// Disable mix-up.
    #[arg(long)]
    pub no_mixup: bool,
    /// Single-threaded, bitwise reproducible execution.
    #[arg(long)]
    pub deterministic: bool,
    /// Architecture variant.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// summed (one step per iteration) or alternating (one step per task).
    #[arg(long, value_parser = parse_step_mode)]
    pub step_mode: Option<StepMode>,
    /// Output directory for checkpoints and logs.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_step_mode(s: &str) -> Result<StepMode, String> {
    match s {
        "summed" => Ok(StepMode::Summed),
        "alternating" => Ok(StepMode::Alternating),
        _ => Err(format!("unknown step mode `{s}` (expected summed or alternating)")),
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Run config JSON.
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    /// Run config JSON; the target task's entry supplies data and batch settings.
    #[arg(long)]
    pub config: PathBuf,
    /// Jointly trained checkpoint to start from.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Target task (ASC, TAG or SED).
    #[arg(long)]
    pub task: Task,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Task to score (ASC, TAG or SED).
    #[arg(long)]
    pub task: Task,
    /// Evaluation manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint to evaluate; not needed with --predictions.
    #[arg(long, required_unless_present = "predictions")]
    pub checkpoint: Option<PathBuf>,
    /// Score this predictions JSONL instead of running a model.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Write the model's per-segment predictions as JSONL.
    #[arg(long)]
    pub write_predictions: Option<PathBuf>,
    /// Run config whose feature settings match training.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// SED output frame length in seconds when scoring a predictions file.
    #[arg(long, default_value_t = dcasenet::model::POOLED_FRAME_S)]
    pub pooled_hop_s: f64,
    /// Write the metric report JSON here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Architecture config JSON; defaults to the built-in check network.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Variant of the built-in check network.
    #[arg(long, default_value = "v3")]
    pub variant: Variant,
    /// Maximum relative error allowed.
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Input frames.
    #[arg(long, default_value_t = 16)]
    pub frames: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Check at most this many elements per parameter tensor.
    #[arg(long)]
    pub max_elements: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            commands::report_error("usage", &e.kind().to_string());
            return ExitCode::from(2);
        }
    };
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            commands::report_error(commands::error_kind(&e), &format!("{e:#}"));
            ExitCode::FAILURE
        }
    }
}
