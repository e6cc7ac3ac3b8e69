//! `rfd`: data synthesis, training, feature extraction, evaluation and
//! plotting for cross-resolution re-identification experiments.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 internal error. On failure stderr carries one line
//! `rfd: <kind>: <message>`.

mod config;
mod evaluate;
mod extract;
mod plot;
mod synth;
mod train;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::CliError;

#[derive(Parser)]
#[command(name = "rfd", version, about = "Cross-resolution re-identification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build HR and multi-resolution manifests, splits and protocols from a corpus.
    Synth(synth::SynthArgs),
    /// Assign pixel-count resolution labels to a manifest.
    #[command(name = "pseudo-label")]
    PseudoLabel(synth::PseudoLabelArgs),
    /// Train the feature (bf) or resolution (br) network.
    Train(train::TrainArgs),
    /// Embed a manifest's images into a feature store.
    Extract(extract::ExtractArgs),
    /// Score protocols from feature stores.
    Eval(evaluate::EvalArgs),
    /// Score a grid of fusion weights and signs.
    Sweep(evaluate::SweepArgs),
    /// Render CMC curves, per-split bars and ranked strips.
    Plot(plot::PlotArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => synth::run(a),
        Command::PseudoLabel(a) => synth::run_pseudo_label(a),
        Command::Train(a) => train::run(a),
        Command::Extract(a) => extract::run(a),
        Command::Eval(a) => evaluate::run_eval(a),
        Command::Sweep(a) => evaluate::run_sweep(a),
        Command::Plot(a) => plot::run(a),
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RFD_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("rfd: usage: {}", one_line(first));
            return ExitCode::from(1);
        }
    };
    panic::set_hook(Box::new(|_| {}));
    match panic::catch_unwind(AssertUnwindSafe(|| run(cli))) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("rfd: {}: {}", e.kind(), one_line(&e.to_string()));
            ExitCode::from(e.code())
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .map(String::as_str)
                .or_else(|| payload.downcast_ref::<&str>().copied())
                .unwrap_or("panic");
            eprintln!("rfd: internal: {}", one_line(msg));
            ExitCode::from(3)
        }
    }
}
