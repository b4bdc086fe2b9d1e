//! `twmlp`: synthesize data, train, evaluate, count cost, benchmark and
//! stream poses.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "twmlp", version, about = "Full-body pose from three trackers", arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Online,
    Sequence,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LossArg {
    Uncertainty,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Walk,
    Run,
    Jump,
    Idle,
    All,
}

/// Flags shared by every subcommand; they override `--config`.
#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Frames per window.
    #[arg(long = "T")]
    window: Option<usize>,
    /// Past windows.
    #[arg(long = "K")]
    past: Option<usize>,
    /// MLP blocks (fusion after every odd block).
    #[arg(long = "L")]
    blocks: Option<usize>,
    /// Latent width.
    #[arg(long = "D")]
    width: Option<usize>,
    /// Training steps (learning-rate drop moves to 3/4 of them).
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    fps: Option<u32>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    protocol: Option<ProtocolArg>,
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic MOTN clips and a dataset manifest.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Motion kinds, comma separated.
        #[arg(long, value_enum, value_delimiter = ',')]
        kind: Vec<KindArg>,
        /// Clips per kind.
        #[arg(long)]
        count: Option<usize>,
        /// Clip length in seconds.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Train on the train split of a manifest.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset manifest.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score a checkpoint on the test split, or run the T/K ablation grid.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Train and score one model per (T, K) pair instead.
        #[arg(long)]
        ablation: bool,
        #[arg(long, value_delimiter = ',', default_value = "8,16")]
        grid_t: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        grid_k: Vec<usize>,
    },
    /// Analytic parameter and FLOP count.
    Flops {
        #[command(flatten)]
        common: Common,
        /// Per-layer breakdown.
        #[arg(long)]
        layers: bool,
        /// Emit JSON.
        #[arg(long)]
        json: bool,
    },
    /// Per-frame streaming latency.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Seconds of input to time.
        #[arg(long)]
        duration: Option<f64>,
        /// Cache window-block activations.
        #[arg(long)]
        cache: bool,
        /// Also time the T=196, K=0, L=12 base model.
        #[arg(long)]
        compare: bool,
    },
    /// Read tracker CSV frames on stdin, write pose CSV lines on stdout.
    Stream {
        #[command(flatten)]
        common: Common,
        /// Model checkpoint; a freshly initialized model when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        cache: bool,
        /// Emit poses during warm-up by repeating the first frame.
        #[arg(long)]
        pad: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Ok(v) = std::env::var("TWMLP_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => twmlp::exec::init_threads(n),
            _ => {
                eprintln!("error: TWMLP_THREADS must be a positive integer, got {v:?}");
                return ExitCode::from(1);
            }
        }
    }
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
