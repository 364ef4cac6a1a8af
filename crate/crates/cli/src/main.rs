//! `tsviz`: generate synthetic leaf datasets, train the Teacher/Student
//! visualization network, and explain or evaluate its predictions.

mod commands;
mod config;
mod error;
mod fanout;

use clap::{Parser, Subcommand};
use config::{Overrides, RunConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "tsviz",
    about = "Trainable-visualization networks: train a Teacher/Student pair and explain its decisions",
    version
)]
struct Cli {
    /// Key-value config file describing the run.
    #[arg(short, long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed override (required by generate/train if the config has none).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Explanation method: proposed, gradient, gradcam, or all.
    #[arg(long, global = true, value_name = "METHOD")]
    method: Option<String>,
    /// Class the perturbation score tracks: argmax or label.
    #[arg(long = "f-class", global = true, value_name = "MODE")]
    f_class: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic leaf dataset with ground-truth lesion masks.
    Generate,
    /// Train the Teacher/Student model on a generated dataset.
    Train,
    /// Write heatmap and threshold-mask images for validation samples.
    Visualize,
    /// Run the erasure benchmark and write perturbation tables.
    Evaluate,
    /// Summarize AOPC, lesion IoU, and relevance clusters per method.
    Compare,
    /// Compare analytic gradients against finite differences.
    Gradcheck,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out,
        method: cli.method,
        f_class: cli.f_class,
    };
    let result = RunConfig::load(cli.config.as_deref(), &overrides).and_then(|cfg| {
        match cli.command {
            Command::Generate => commands::generate(&cfg),
            Command::Train => commands::train(&cfg),
            Command::Visualize => commands::visualize(&cfg),
            Command::Evaluate => commands::evaluate(&cfg),
            Command::Compare => commands::compare(&cfg),
            Command::Gradcheck => commands::gradcheck_cmd(&cfg),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
