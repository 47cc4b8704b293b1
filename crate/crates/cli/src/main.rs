mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Transformer encoder training with teacher-student distillation.
#[derive(Parser)]
#[command(name = "tkd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command. Each flag overrides the matching
/// config key.
#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// `key = value` configuration file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Training data: a TSV path or `synth:<keyword|parity|majority>`.
    #[arg(long, value_name = "PATH")]
    pub data: Option<String>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "F")]
    pub alpha: Option<f64>,
    #[arg(long, value_name = "F")]
    pub temperature: Option<f64>,
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
    #[arg(long, value_name = "N")]
    pub batch_size: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Masked-token pre-training on the training split's text.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Which architecture from the config to pre-train.
        #[arg(long, value_parser = ["teacher", "student"], default_value = "teacher")]
        arch: String,
    },
    /// Train the teacher classifier on true labels.
    TrainTeacher {
        #[command(flatten)]
        common: Common,
        /// Start from this checkpoint instead of a fresh initialization.
        #[arg(long, value_name = "PATH")]
        init: Option<PathBuf>,
    },
    /// Write the teacher's softened predictions for the training split.
    MakeSoftlabels {
        /// Teacher checkpoint.
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train the student on the combined task and distillation loss.
    Distill {
        /// Soft-label file from `make-softlabels`.
        softlabels: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Teacher checkpoint, required for feature distillation.
        #[arg(long, value_name = "PATH")]
        teacher: Option<PathBuf>,
        /// Start from this checkpoint instead of a fresh initialization.
        #[arg(long, value_name = "PATH")]
        init: Option<PathBuf>,
    },
    /// Score a checkpoint, or an external predictions file, on a split.
    Evaluate {
        /// Model checkpoint.
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// `example_id,predicted_class` file to score instead of a model.
        #[arg(long, value_name = "PATH", conflicts_with = "checkpoint")]
        predictions: Option<PathBuf>,
        #[arg(long, value_parser = ["train", "validation"], default_value = "validation")]
        split: String,
    },
    /// Run every arm of an ablation plan over its seeds.
    Ablate {
        /// Plan file: run keys plus `arms` and `seeds`.
        plan: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference check of the full model's gradients.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Pretrain { common, arch } => commands::pretrain(&common, &arch),
        Command::TrainTeacher { common, init } => commands::train_teacher(&common, init.as_deref()),
        Command::MakeSoftlabels { checkpoint, common } => commands::make_softlabels(&common, &checkpoint),
        Command::Distill {
            softlabels,
            common,
            teacher,
            init,
        } => commands::distill(&common, &softlabels, teacher.as_deref(), init.as_deref()),
        Command::Evaluate {
            checkpoint,
            common,
            predictions,
            split,
        } => commands::evaluate(&common, checkpoint.as_deref(), predictions.as_deref(), &split),
        Command::Ablate { plan, common } => commands::ablate(&common, &plan),
        Command::Gradcheck { common } => commands::gradcheck(&common),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<tkd::Error>() {
                Some(tkd::Error::Config(_) | tkd::Error::Schema(_)) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
