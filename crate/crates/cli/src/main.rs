mod arch;
mod commands;
mod draw;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Default dataset directory when `--data` is not given.
pub const DATA_ENV: &str = "ANATGROUND_DATA";

#[derive(Debug, Parser)]
#[command(
    name = "anatground",
    version,
    about = "Anatomy-pretrained phrase grounding for chest radiographs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic corpus.
    Synth(SynthArgs),
    /// Create a general-stage checkpoint with a vocabulary built from a dataset.
    Init(InitArgs),
    /// Anatomical pre-training.
    Pretrain(PretrainArgs),
    /// Finding-phrase fine-tuning with per-epoch validation.
    Finetune(FinetuneArgs),
    /// Score a checkpoint on one partition.
    Eval(EvalArgs),
    /// Tabulate evaluation runs with paired significance tests.
    Compare(CompareArgs),
    /// Ground one phrase in one image.
    Ground(GroundArgs),
    /// Serve checkpoints over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct DataArg {
    /// Dataset directory holding manifest.json.
    #[arg(long, env = DATA_ENV)]
    data: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Lexicon JSON; the built-in one otherwise.
    #[arg(long)]
    lexicon: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InitArgs {
    #[command(flatten)]
    data: DataArg,
    /// Architecture TOML.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    lexicon: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PretrainArgs {
    #[command(flatten)]
    data: DataArg,
    #[arg(long)]
    config: Option<PathBuf>,
    /// General-stage input checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Pre-train only on images of this split's training partition.
    #[arg(long)]
    split: Option<PathBuf>,
    /// Mid-run checkpoint to continue from.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FinetuneArgs {
    #[command(flatten)]
    data: DataArg,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Split JSON; a 70/10/20 split by image is made (and saved) otherwise.
    #[arg(long)]
    split: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArg,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Split JSON; without it every record of the task is scored.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    partition: PartitionArg,
    #[arg(long, value_enum, default_value = "finding")]
    task: TaskArg,
    /// Name used in reports; the checkpoint file stem otherwise.
    #[arg(long)]
    model_id: Option<String>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum PartitionArg {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum TaskArg {
    Anatomy,
    Finding,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Evaluation output directories. The first is the baseline for
    /// table1/table2; table3 reads them as (with, without) pairs.
    #[arg(long = "eval", required = true)]
    evals: Vec<PathBuf>,
    #[arg(long, default_value = "table1")]
    layout: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = anatground_core::eval::significance::DEFAULT_PERMUTATIONS)]
    permutations: usize,
    #[arg(long, default_value_t = anatground_core::eval::significance::DEFAULT_SIGNIFICANCE_SEED)]
    seed: u64,
}

#[derive(Debug, Args)]
struct GroundArgs {
    /// PNG or JPEG file.
    image: PathBuf,
    /// Phrase to ground.
    text: String,
    #[arg(long, required_unless_present = "server")]
    checkpoint: Option<PathBuf>,
    /// Ask a running service instead of loading a checkpoint.
    #[arg(long, requires = "model_id")]
    server: Option<String>,
    #[arg(long)]
    model_id: Option<String>,
    /// Write the image with the box outline burned in.
    #[arg(long)]
    draw: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Checkpoint files; repeat for several models.
    #[arg(long = "checkpoint", required = true)]
    checkpoints: Vec<PathBuf>,
    /// Model ids in checkpoint order; file stems otherwise.
    #[arg(long = "model-id")]
    model_ids: Vec<String>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: String,
}

fn main() -> std::process::ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Init(a) => commands::init(a),
        Command::Pretrain(a) => commands::pretrain(a),
        Command::Finetune(a) => commands::finetune(a),
        Command::Eval(a) => commands::eval(a),
        Command::Compare(a) => commands::compare(a),
        Command::Ground(a) => commands::ground(a),
        Command::Serve(a) => commands::serve(a),
    };
    match result {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
