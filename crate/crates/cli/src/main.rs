mod commands;
mod config;
mod manifest;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stvg::data::SplitName;
use stvg::model::Variant;
use stvg::synth::Preset;
use stvg::visual::ModuleKind;
use stvg::StvgError;

/// Bad invocation detected after argument parsing (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Input that failed validation (exit code 1) without being an error of the run itself.
#[derive(Debug)]
pub struct InvalidInput(pub String);

impl std::fmt::Display for InvalidInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InvalidInput {}

#[derive(Parser, Debug)]
#[command(name = "stvg", version, about = "Grounding spatio-temporal identifying descriptions in synthetic videos")]
pub struct Cli {
    /// TOML file with `seed`, `feature_seed` and [synth], [model], [windows], [perturbation] sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Where to write the run manifest (default: next to the primary output).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset.
    GenData(GenDataArgs),
    /// Train a grounding model.
    Train(TrainArgs),
    /// Evaluate a model or a predictions file.
    Eval(EvalArgs),
    /// Accuracy with modules disabled.
    Ablate(AblateArgs),
    /// Word attention per part-of-speech tag and module.
    AttnStats(AttnStatsArgs),
    /// Tubelet proposals from detections, or temporal proposals for a dataset.
    Propose(ProposeArgs),
    /// Link per-frame detections into tubelets.
    Link(LinkArgs),
    /// Check expressions against the NP + VP + modifier constraint.
    Validate(ValidateArgs),
    /// Comparison table and ablation ladder from stored runs.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long, default_value = "motion")]
    pub preset: Preset,
    #[arg(long, default_value_t = 30)]
    pub n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write detector-style detections derived from the ground truth.
    #[arg(long)]
    pub dets_out: Option<PathBuf>,
    #[command(flatten)]
    pub perturb: PerturbArgs,
}

#[derive(Args, Debug, Clone, Copy)]
pub struct PerturbArgs {
    /// Box jitter as a fraction of box size.
    #[arg(long)]
    pub jitter: Option<f64>,
    #[arg(long)]
    pub drop_rate: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Trained parameters to rank the candidates with.
    #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
    pub params: Option<PathBuf>,
    /// JSONL predictions: `{"instance_id", "predicted_index"}`, `{"instance_id", "tubelet"}`
    /// or `{"instance_id", "interval", "tubelet"}`.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: SplitName,
    /// Row label in reports (default: the model variant).
    #[arg(long)]
    pub name: Option<String>,
    /// Seed column for a predictions file in reports (models carry their own).
    #[arg(long, requires = "predictions")]
    pub seed: Option<u64>,
    /// Also evaluate on tubelets linked from perturbed detections.
    #[arg(long, requires = "params")]
    pub detector: bool,
    #[command(flatten)]
    pub perturb: PerturbArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the model's predictions as JSONL.
    #[arg(long, requires = "params")]
    pub predictions_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: SplitName,
    /// Modules to zero out, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub disable: Vec<ModuleKind>,
    /// Incremental rows in ladder order instead of a single ablation.
    #[arg(long)]
    pub ladder: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AttnStatsArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: SplitName,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ProposeArgs {
    /// Detections file: emit the `top_k` best linked tubelets per video.
    #[arg(long, required_unless_present = "data", conflicts_with = "data")]
    pub dets: Option<PathBuf>,
    /// Dataset: train the window classifier on its train split and emit the
    /// `top_k` temporal proposals per video of `split`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub top_k: usize,
    #[arg(long, default_value = "test")]
    pub split: SplitName,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct LinkArgs {
    #[arg(long, required_unless_present = "data", conflicts_with = "data")]
    pub dets: Option<PathBuf>,
    /// Synthesize detections from the dataset's ground truth instead.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub perturb: PerturbArgs,
    #[arg(long, default_value_t = stvg::proposals::DEFAULT_LINK_IOU)]
    pub link_iou: f64,
    #[arg(long, default_value_t = stvg::proposals::DEFAULT_MAX_TUBELETS)]
    pub max_tubelets: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    /// One expression per line; `-` reads standard input.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Directory holding the manifests of earlier runs.
    #[arg(long)]
    pub runs: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match e.downcast_ref::<StvgError>() {
                Some(se) if se.is_validation() => eprintln!("invalid input: {se}"),
                _ => eprintln!("error: {e:#}"),
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
