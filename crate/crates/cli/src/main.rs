//! `caglow`: train, sample, manipulate and evaluate conditional flows.

mod commands;
mod condspec;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Invalid invocation detected after argument parsing.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Parser)]
#[command(name = "caglow", version, about = "Conditional adversarial generative flows on small images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// Experiment config (JSON).
    #[arg(long, short)]
    pub config: PathBuf,
    /// Seed override; takes precedence over CAGFLOW_SEED and the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Stage 1: maximum-likelihood training of the unconditional flow.
    TrainFlow {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Stage 2: adversarial training of encoder and supervision block on a trained flow.
    TrainCond {
        #[command(flatten)]
        common: Common,
        /// Stage-1 checkpoint.
        #[arg(long)]
        flow_ckpt: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Class-prior baseline trained end to end.
    TrainBaseline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Sample a grid of images for one condition.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 16)]
        n: usize,
        /// Grid shape RxC; defaults to the smallest near-square grid.
        #[arg(long)]
        grid: Option<String>,
        /// Condition such as `id=3,attr:thick=1,cu=0.5`.
        #[arg(long, default_value = "")]
        condition: String,
        /// Flow prior temperature (unconditional and class-prior models).
        #[arg(long)]
        temperature: Option<f64>,
        /// Base name of the written files.
        #[arg(long, default_value = "sample")]
        name: String,
    },
    /// Interpolate between two conditions with shared noise.
    Interpolate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 8)]
        steps: usize,
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        #[arg(long, default_value = "interpolate")]
        name: String,
    },
    /// Cumulative attribute edits: the start image followed by one frame per edit.
    Manipulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Edits in order, e.g. `thick,invert,-thick`.
        #[arg(long)]
        attrs: String,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// Starting condition for the conditional model.
        #[arg(long, default_value = "")]
        condition: String,
        /// Test-set image to edit for the other models.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value = "manipulate")]
        name: String,
    },
    /// Compute evaluation metrics with an oracle classifier.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Metrics to report (repeatable or comma separated); all by default.
        #[arg(long, value_delimiter = ',')]
        metric: Vec<String>,
        /// Train the oracle on the config's dataset and save it.
        #[arg(long, conflicts_with = "oracle")]
        train_oracle: bool,
        /// Previously trained oracle checkpoint.
        #[arg(long)]
        oracle: Option<PathBuf>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use caglow::Error as E;
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<E>() {
        Some(E::OracleBelowFloor { .. }) => 3,
        Some(E::NonFiniteLoss { .. } | E::FlowDiverged { .. } | E::TrainingAborted { .. } | E::SingularTransform { .. }) => 4,
        Some(
            E::Config(_)
            | E::InvalidArgument(_)
            | E::UnknownAttribute(_)
            | E::LabelOutOfRange { .. }
            | E::Parse { .. }
            | E::Checkpoint(_)
            | E::Io(_)
            | E::Json(_)
            | E::UndefinedDirection(_)
            | E::ShapeMismatch { .. },
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::TrainFlow { common, epochs } => commands::train_flow(&common, epochs),
        Command::TrainCond {
            common,
            flow_ckpt,
            epochs,
        } => commands::train_cond(&common, &flow_ckpt, epochs),
        Command::TrainBaseline { common, epochs } => commands::train_baseline(&common, epochs),
        Command::Sample {
            common,
            checkpoint,
            n,
            grid,
            condition,
            temperature,
            name,
        } => commands::sample(&common, &checkpoint, n, grid.as_deref(), &condition, temperature, &name),
        Command::Interpolate {
            common,
            checkpoint,
            steps,
            from,
            to,
            name,
        } => commands::interpolate(&common, &checkpoint, steps, &from, &to, &name),
        Command::Manipulate {
            common,
            checkpoint,
            attrs,
            alpha,
            condition,
            index,
            name,
        } => commands::manipulate(&common, &checkpoint, &attrs, alpha, &condition, index, &name),
        Command::Eval {
            common,
            checkpoint,
            metric,
            train_oracle,
            oracle,
        } => commands::eval(&common, &checkpoint, &metric, train_oracle, oracle.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
