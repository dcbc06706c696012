//! `dehaze`: dataset synthesis, training, inference, and evaluation for the
//! transmission-steered dehazing pipeline.
//!
//! Exit code 0 on success; any failure prints a single machine-parsable
//! `error: ...` line on stderr and exits 1. DEHAZE_LOG=quiet silences
//! progress output.

mod commands;
mod config;
mod image_io;
mod manifest;
mod rgbd;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::eval_cmd::cmd_eval;
use commands::run_cmd::{cmd_run, RunStage};
use commands::synth::cmd_synth;
use commands::train_cmd::{cmd_train, TrainMode};

#[derive(Parser)]
#[command(name = "dehaze", version, about = "Single-image dehazing: synthesize, train, run, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a paired hazy/clear dataset with a manifest.
    Synth {
        /// Config file (key = value lines).
        #[arg(long)]
        config: PathBuf,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the dehazing subnetworks, the refinement stage, or the
    /// no-transmission ablation.
    Train {
        #[arg(long, value_enum)]
        mode: TrainMode,
        #[arg(long)]
        config: PathBuf,
        /// Dataset manifest written by `synth`.
        #[arg(long)]
        data: PathBuf,
        /// Directory that receives the run directory.
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint to continue from. Required for `--mode refine`, where
        /// it names the frozen dehazing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run inference on image files (PNG or PPM/PGM).
    Run {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_enum)]
        stage: RunStage,
        /// Input images.
        #[arg(long = "in", num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a manifest split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Split to score: train or val.
        #[arg(long, default_value = "val")]
        split: String,
        /// Report file (machine-readable; a .txt table is written next to it).
        #[arg(long)]
        out: PathBuf,
        /// Optional config (for the classical-SSIM report switch).
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { config, out } => cmd_synth(&config, &out),
        Command::Train {
            mode,
            config,
            data,
            out,
            resume,
        } => cmd_train(mode, &config, &data, &out, resume.as_deref()),
        Command::Run {
            ckpt,
            stage,
            inputs,
            out,
        } => cmd_run(&ckpt, stage, &inputs, &out),
        Command::Eval {
            ckpt,
            data,
            split,
            out,
            config,
        } => cmd_eval(&ckpt, &data, &split, &out, config.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // single line, chain flattened, machine-parsable
            let chain: Vec<String> = err.chain().map(|e| e.to_string()).collect();
            let msg = chain.join(": ").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
