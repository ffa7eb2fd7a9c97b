//! `sap`: data generation, parsing, training, evaluation and exports for
//! skeleton-anchor angle features.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use sap_core::sap::Variant;
use sap_core::train::AblationAxis;

use commands::Common;
use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "sap",
    version,
    about = "Skeleton-anchor angle features: train, evaluate, export"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic task as train.sapds and test.sapds.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Convert NTU text skeleton files into dataset.sapds.
    Parse {
        #[command(flatten)]
        common: Common,
        /// One or more `.skeleton` files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Joints per body; 25 selects the NTU layout, anything else a chain.
        #[arg(long, default_value_t = 25)]
        joints: usize,
        #[arg(long, default_value_t = 1)]
        min_frames: usize,
        /// Label for every file; by default taken from an `A###` file name.
        #[arg(long)]
        label: Option<u32>,
    },
    /// Write the configured feature streams as features.sapft plus a JSON sidecar.
    Featurize {
        #[command(flatten)]
        common: Common,
        /// SAPDS file; defaults to the configured train split.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Use the model config and learned anchors from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Featurize the test split instead of train.
        #[arg(long)]
        test: bool,
    },
    /// Train a model; writes ckpt, report.json, history.csv and confusion.csv.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Also save `ckpt-epochN` every N epochs (0: final checkpoint only).
        #[arg(long, default_value_t = 0)]
        checkpoint_every: usize,
    },
    /// Evaluate a checkpoint; writes eval.json and confusion.csv.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Labelled SAPDS file; defaults to the configured test split.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Train every arm of an ablation once per seed; writes ablation.json.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// head-count or anchor-location.
        #[arg(long)]
        axis: AblationAxis,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
    },
    /// Compare analytic gradients with central differences for every parameter.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// V1, V2 or V3; defaults to the config.
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        heads: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 6)]
        frames: usize,
        /// Backbone hidden widths.
        #[arg(long, value_delimiter = ',', num_args = 2, default_value = "8,6")]
        hidden: Vec<usize>,
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Write the anchors a checkpoint proposes for one sample as JSON.
    ExportAnchors {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        sample: usize,
        /// SAPDS file; defaults to the configured test split.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Take the sample from the train split.
        #[arg(long)]
        train_split: bool,
    },
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData { common } => commands::gen_data(&common),
        Command::Parse {
            common,
            inputs,
            joints,
            min_frames,
            label,
        } => commands::parse(
            &common,
            &commands::ParseArgs {
                inputs,
                joints,
                min_frames,
                label,
            },
        ),
        Command::Featurize {
            common,
            input,
            checkpoint,
            test,
        } => commands::featurize(
            &common,
            &commands::FeaturizeArgs {
                input,
                checkpoint,
                test,
            },
        ),
        Command::Train {
            common,
            resume,
            checkpoint_every,
        } => commands::train(
            &common,
            &commands::TrainArgs {
                resume,
                checkpoint_every,
            },
        ),
        Command::Eval {
            common,
            checkpoint,
            input,
        } => commands::eval(&common, &commands::EvalArgs { checkpoint, input }),
        Command::Ablate {
            common,
            axis,
            seeds,
        } => commands::ablate(&common, &commands::AblateArgs { axis, seeds }),
        Command::Gradcheck {
            common,
            variant,
            heads,
            seed,
            frames,
            hidden,
            step,
            tolerance,
        } => commands::gradcheck(
            &common,
            &commands::GradcheckArgs {
                variant,
                heads,
                seed,
                frames,
                hidden: [hidden[0], hidden[1]],
                step,
                tolerance,
            },
        ),
        Command::ExportAnchors {
            common,
            checkpoint,
            sample,
            input,
            train_split,
        } => commands::export_anchors(
            &common,
            &commands::ExportAnchorsArgs {
                checkpoint,
                sample,
                input,
                train_split,
            },
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
