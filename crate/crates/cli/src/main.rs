//! `armhand`: synthesize data, train, evaluate, infer and run ablations.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use armhand::model::Arch;
use armhand::train::{Mode, Profile};
use clap::{Args, Parser, Subcommand};

pub const DATA_DIR_ENV: &str = "ARMHAND_DATA_DIR";

#[derive(Parser)]
#[command(name = "armhand", version, about = "Arm and hand rotation estimation from keypoint sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset of correlated arm-hand motion.
    Synth(SynthArgs),
    /// Train a generator on a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset's test split.
    Eval(EvalArgs),
    /// Predict rotations for one keypoint clip.
    Infer(InferArgs),
    /// Train or load every row of an ablation matrix and tabulate the results.
    Ablate(AblateArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// Output dataset directory.
    #[arg(long, env = DATA_DIR_ENV)]
    pub out: PathBuf,
    /// TOML file with a [synth] section.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Skeleton TOML; the built-in rest skeleton by default.
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub sequences: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub correlation: Option<f64>,
    #[arg(long)]
    pub dropout_rate: Option<f64>,
    #[arg(long)]
    pub pixel_noise: Option<f64>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long, env = DATA_DIR_ENV)]
    pub dataset: PathBuf,
    /// Directory for the checkpoint, training state and log.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with optional profile, arch, [model] and [train] sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_profile)]
    pub profile: Option<Profile>,
    #[arg(long, value_parser = parse_arch)]
    pub arch: Option<Arch>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub no_smooth: bool,
    #[arg(long)]
    pub no_fk: bool,
    #[arg(long)]
    pub no_gan: bool,
    /// Continue from a saved training state; its configuration is reused.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stride between training windows.
    #[arg(long, default_value_t = armhand::datapipe::WINDOW_STEP)]
    pub window_step: usize,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, env = DATA_DIR_ENV)]
    pub dataset: PathBuf,
    /// Directory for report.json, report.txt and the run manifest.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Clip file carrying keypoints.
    #[arg(long)]
    pub input: PathBuf,
    /// Output clip file with predicted rotations.
    #[arg(long)]
    pub out: PathBuf,
    /// Skeleton TOML; must match the checkpoint.
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
    /// Also write per-frame joint positions as CSV.
    #[arg(long)]
    pub positions: Option<PathBuf>,
}

#[derive(Args)]
pub struct AblateArgs {
    /// Matrix TOML; the seven-row default ladder when omitted.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    #[arg(long, env = DATA_DIR_ENV)]
    pub dataset: PathBuf,
    /// Directory for table.txt, rows.jsonl and the run manifest.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    s.parse().map_err(|e: armhand::Error| e.to_string())
}

fn parse_arch(s: &str) -> Result<Arch, String> {
    s.parse().map_err(|e: armhand::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: armhand::Error| e.to_string())
}

/// One-line diagnostic: `armhand: error[<kind>]: <message chain>`.
fn report(err: &anyhow::Error) {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<armhand::Error>())
        .map_or("cli", armhand::Error::kind);
    let msg = err.chain().map(ToString::to_string).collect::<Vec<_>>().join(": ");
    eprintln!("armhand: error[{kind}]: {}", msg.replace('\n', " "));
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Infer(a) => commands::infer(a),
        Command::Ablate(a) => commands::ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::FAILURE
        }
    }
}
