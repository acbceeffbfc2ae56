//! `fpa` — train masking-augmented classifiers, compute gradient-based
//! importance estimators, and evaluate their fidelity with MIF/LIF
//! perturbation curves.

use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

mod archive;
mod commands;
mod config;
mod error;
mod outputs;
mod pipeline;

use error::CliError;

/// Augmentation arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Arm {
    None,
    Fpa,
    Rectangle,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Arm::None => "none",
            Arm::Fpa => "fpa",
            Arm::Rectangle => "rectangle",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Parser)]
#[command(
    name = "fpa",
    version,
    about = "Feature perturbation augmentation and importance-estimator fidelity evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one augmentation arm; writes a checkpoint and per-epoch metrics.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        arm: Arm,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overrides the training seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compute estimator maps for the test subset and archive them.
    Saliency {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated estimator ids; defaults to the config list.
        #[arg(long, value_delimiter = ',')]
        estimators: Option<Vec<String>>,
        /// Overrides eval.samples from the config.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overrides the evaluation seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Perturbation curves and the fidelity area per estimator.
    Curves {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Saliency archive directory produced by the saliency command.
        #[arg(long)]
        saliency: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overrides the evaluation seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Per-sample diagnostics: truncated heatmap, ranked score series,
    /// score statistics.
    Report {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        saliency: PathBuf,
        #[arg(long, default_value = "ig_sum")]
        estimator: String,
        #[arg(long)]
        sample_id: usize,
        /// Truncation percentile in (50, 100].
        #[arg(long, default_value_t = 98.0)]
        percentile: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run train, saliency, and curves for all three arms and emit the
    /// cross-arm fidelity table.
    Reproduce {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, arm, out, seed } => {
            commands::train::cmd_train(&config, arm, &out, seed).map(|_| ())
        }
        Command::Saliency { config, checkpoint, estimators, samples, out, seed } => {
            commands::saliency::cmd_saliency(
                &config,
                &checkpoint,
                estimators.as_deref(),
                samples,
                &out,
                seed,
            )
            .map(|_| ())
        }
        Command::Curves { config, checkpoint, saliency, out, seed } => {
            commands::curves::cmd_curves(&config, &checkpoint, &saliency, &out, seed).map(|_| ())
        }
        Command::Report { config, checkpoint, saliency, estimator, sample_id, percentile, out } => {
            commands::report::cmd_report(
                &config,
                &checkpoint,
                &saliency,
                &estimator,
                sample_id,
                percentile,
                &out,
            )
        }
        Command::Reproduce { config, out } => commands::reproduce::cmd_reproduce(&config, &out),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("{err}");
        std::process::exit(err.exit_code());
    }
}
