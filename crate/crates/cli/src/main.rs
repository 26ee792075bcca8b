//! `cfsr`: train, run, fuse, evaluate and cost a ConvFormer SR network.
//!
//! Exit codes: 0 success, 2 bad flags, 3 I/O or file format, 4 shape or
//! configuration mismatch, 5 non-finite training loss.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::Failure;

#[derive(Debug, Parser)]
#[command(name = "cfsr", version, about = "Lightweight ConvFormer super-resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on a directory of HR PNGs with L1 loss and Adam.
    Train(TrainArgs),
    /// Super-resolve a PNG or every PNG in a directory.
    Sr(SrArgs),
    /// Merge edge-preserving branches into single kernels.
    Fuse(FuseArgs),
    /// Luma PSNR/SSIM of SR outputs (or of a model) against HR images.
    Eval(EvalArgs),
    /// Analytic parameter and multiply-accumulate counts.
    Count(CountArgs),
    /// Centre-crop and bicubic-downsample a directory of HR PNGs.
    Degrade(DegradeArgs),
}

fn parse_scale(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(r @ 2..=4) => Ok(r),
        _ => Err(format!("scale must be 2, 3 or 4, got {s:?}")),
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Feature channels.
    #[arg(long, default_value_t = 48)]
    pub channels: usize,
    /// Residual blocks.
    #[arg(long, default_value_t = 2)]
    pub blocks: usize,
    /// ConvFormer layers per block.
    #[arg(long, default_value_t = 6)]
    pub layers: usize,
    /// Large-kernel mixer size (3, 5, 7, 9 or 11).
    #[arg(long, default_value_t = 9)]
    pub mixer_kernel: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of HR PNGs.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory of same-named LR PNGs used instead of on-the-fly degradation.
    #[arg(long)]
    pub lr_dir: Option<PathBuf>,
    /// Output directory for checkpoints and the training log.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4, value_parser = parse_scale)]
    pub scale: usize,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Start from these weights instead of a random initialisation.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long, default_value_t = 500_000)]
    pub iters: usize,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    /// LR patch side.
    #[arg(long, default_value_t = 64)]
    pub patch: usize,
    #[arg(long, default_value_t = 2e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.99)]
    pub beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub eps: f64,
    /// Keep the learning rate fixed.
    #[arg(long, conflicts_with = "milestones")]
    pub constant_lr: bool,
    /// Comma-separated iteration counts after which the rate halves
    /// (default: 50%, 75% and 90% of --iters).
    #[arg(long, value_delimiter = ',')]
    pub milestones: Option<Vec<usize>>,
    /// Maximum global gradient norm.
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint period; 0 keeps only the final checkpoint.
    #[arg(long, default_value_t = 5000)]
    pub checkpoint_every: usize,
    /// Disable random rotations and flips.
    #[arg(long)]
    pub no_augment: bool,
    /// Data loading threads.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct SrArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, value_parser = parse_scale)]
    pub scale: usize,
    /// Input PNG or directory.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output PNG or directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Fuse branched weights before running and report the residual.
    #[arg(long)]
    pub fused: bool,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of HR ground-truth PNGs.
    #[arg(long)]
    pub hr: PathBuf,
    /// Directory of same-named SR outputs.
    #[arg(long, required_unless_present = "weights", conflicts_with = "weights")]
    pub sr: Option<PathBuf>,
    /// Super-resolve degraded HR images with these weights instead.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Same-named LR inputs for --weights (default: bicubic degradation).
    #[arg(long, requires = "weights")]
    pub lr_dir: Option<PathBuf>,
    #[arg(long, value_parser = parse_scale)]
    pub scale: usize,
    /// Pixels shaved from each side (default: the scale).
    #[arg(long)]
    pub border: Option<usize>,
    /// Also write per-image scores to this CSV file.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CountArgs {
    #[arg(long, value_parser = parse_scale)]
    pub scale: usize,
    /// HR target size as WIDTHxHEIGHT.
    #[arg(long, default_value = "1280x720")]
    pub hr_size: String,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Count the training form with unmerged branches.
    #[arg(long)]
    pub branched: bool,
    /// Print CSV instead of a table.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    #[arg(long, value_parser = parse_scale)]
    pub scale: usize,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            let first = first.trim_start_matches("error: ");
            eprintln!("{}", Failure::usage(first));
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Sr(a) => commands::sr(a),
        Command::Fuse(a) => commands::fuse(a),
        Command::Eval(a) => commands::eval(a),
        Command::Count(a) => commands::count(a),
        Command::Degrade(a) => commands::degrade(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{f}");
            f.exit_code()
        }
    }
}
