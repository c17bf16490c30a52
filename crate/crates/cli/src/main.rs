//! `mmloc`: synthesize multipath localization datasets, train the MLP
//! regressor (optionally with Bayesian hyperparameter search), and report
//! localization error statistics.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric divergence,
//! 4 I/O error.

mod commands;
mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::{cmd_evaluate, cmd_generate, cmd_train, EvaluateArgs, GenerateArgs, TrainArgs};
use mmloc_core::Error;

#[derive(Parser)]
#[command(name = "mmloc", version, about = "Multipath fingerprint localization pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Trace a scene and write the MPC table plus channel responses.
    Generate {
        /// Preset name (see README) or path to a scene JSON file.
        #[arg(long)]
        scene: String,
        /// Output directory for the dataset.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// OFDM subcarriers in the synthesized response.
        #[arg(long, default_value_t = 64)]
        subcarriers: usize,
        /// Base-station antennas in the synthesized response.
        #[arg(long, default_value_t = 10)]
        antennas: usize,
    },
    /// Fit the regressor on a generated dataset.
    Train {
        /// Dataset directory produced by `generate`.
        #[arg(long)]
        data: PathBuf,
        /// Feature mode: aoa, aoa-rss, aoa-rss-toa or abs-response.
        #[arg(long)]
        mode: String,
        /// Output directory for model and reports.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Search hyperparameters instead of using the fixed flags below.
        #[arg(long)]
        hyperopt: bool,
        /// Trial budget for --hyperopt.
        #[arg(long, default_value_t = 30)]
        budget: usize,
        /// Hidden-layer 1 nodes (fixed-config runs).
        #[arg(long, default_value_t = 25)]
        h1: usize,
        /// Hidden-layer 2 nodes (fixed-config runs).
        #[arg(long, default_value_t = 25)]
        h2: usize,
        #[arg(long, default_value_t = 0.05)]
        learning_rate: f64,
        /// tansig, logsig, purelin, poslin or radbas.
        #[arg(long, default_value = "tansig")]
        activation: String,
        #[arg(long, default_value_t = 2000)]
        epochs: usize,
        /// Strongest components per user for the parameter modes.
        #[arg(long, default_value_t = 3)]
        num_mpcs: usize,
        /// full (fit and score on everything) or holdout:<fraction>.
        #[arg(long, default_value = "full")]
        split: String,
        /// Gradient batch: "full" or a minibatch size.
        #[arg(long, default_value = "full")]
        batch: String,
    },
    /// Score a trained model against a dataset.
    Evaluate {
        /// Path to model.json (norm_params.json must sit next to it).
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Divergence { .. } => 3,
        Error::Io(_) | Error::Csv(_) => 4,
        _ => 2,
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate {
            scene,
            out,
            seed,
            subcarriers,
            antennas,
        } => cmd_generate(&GenerateArgs {
            scene,
            out,
            seed,
            subcarriers,
            antennas,
        }),
        Command::Train {
            data,
            mode,
            out,
            seed,
            hyperopt,
            budget,
            h1,
            h2,
            learning_rate,
            activation,
            epochs,
            num_mpcs,
            split,
            batch,
        } => cmd_train(&TrainArgs {
            data,
            mode,
            out,
            seed,
            hyperopt,
            budget,
            h1,
            h2,
            learning_rate,
            activation,
            epochs,
            num_mpcs,
            split,
            batch,
        }),
        Command::Evaluate { model, data, out } => cmd_evaluate(&EvaluateArgs { model, data, out }),
    };
    if let Err(error) = result {
        eprintln!("error: {error}");
        std::process::exit(exit_code(&error));
    }
}
