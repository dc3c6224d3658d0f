//! signwave command line: corpus synthesis, training, translation,
//! evaluation, layout inspection, and gradient checking.
//!
//! Exit codes: 0 success, 1 bad config or missing input, 2 training
//! divergence. `--json` switches stdout to machine-parseable JSON.

use clap::{Parser, Subcommand};
use signwave_cli::commands;
use signwave::train::TrainError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "signwave", version, about = "Multi-scale sign-video translation toolkit")]
struct Cli {
    /// Emit machine-parseable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic gesture corpus (manifest + feature files).
    Synth {
        /// JSON config: {"corpus": {...}, "n_sentences": N}.
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model from a run config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Translate one feature file with a trained checkpoint.
    Translate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Beam width; omitting the flag decodes greedily, a bare --beam
        /// uses width 5.
        #[arg(long, num_args = 0..=1, default_missing_value = "5")]
        beam: Option<usize>,
        #[arg(long, default_value_t = 32)]
        max_len: usize,
        #[arg(long, default_value_t = 1.0)]
        length_penalty: f64,
    },
    /// Score a checkpoint against a manifest and write a report.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Report JSON destination.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, num_args = 0..=1, default_missing_value = "5")]
        beam: Option<usize>,
        #[arg(long, default_value_t = 32)]
        max_len: usize,
        #[arg(long, default_value_t = 1.0)]
        length_penalty: f64,
    },
    /// Show the segment layout and a pivot's neighborhood; with a
    /// checkpoint, also its attention weights sorted descending.
    Inspect {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        widths: Vec<usize>,
        #[arg(long)]
        stride: usize,
        #[arg(long)]
        pivot: usize,
        /// Use the extended neighborhood (all smallest-scale segments).
        #[arg(long)]
        extended: bool,
        #[arg(long)]
        ckpt: Option<PathBuf>,
    },
    /// Verify analytic gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value = "joint")]
        mode: String,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { config, out } => commands::synth(&config, &out, cli.json),
        Command::Train { config } => commands::train(&config, cli.json),
        Command::Translate { ckpt, features, beam, max_len, length_penalty } => {
            commands::translate(&ckpt, &features, beam, max_len, length_penalty, cli.json)
        }
        Command::Evaluate { ckpt, manifest, out, beam, max_len, length_penalty } => {
            commands::evaluate(&ckpt, &manifest, &out, beam, max_len, length_penalty, cli.json)
        }
        Command::Inspect { features, widths, stride, pivot, extended, ckpt } => {
            commands::inspect(&features, &widths, stride, pivot, extended, ckpt.as_deref(), cli.json)
        }
        Command::Gradcheck { mode, seed } => commands::gradcheck(&mode, seed, cli.json),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.chain().any(|cause| {
                matches!(cause.downcast_ref::<TrainError>(), Some(TrainError::Diverged { .. }))
            }) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
