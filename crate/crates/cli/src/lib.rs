//! Command-line driver: synthetic data generation, training, cross-protocol
//! training and fine-tuning, evaluation, gradient checking and parameter
//! similarity analysis.

pub mod commands;
pub mod config;

pub use config::RunConfig;

use clap::{Parser, Subcommand};
use sepbn_core::Error;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "sepbn", version, about = "Separable batch normalization for landmark regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic multi-domain dataset.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a single-protocol network.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 1: joint training with one head per dataset protocol.
    CntTrain {
        #[arg(long)]
        config: PathBuf,
        /// Repeat once per dataset.
        #[arg(long, required = true, num_args = 1)]
        data: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 2: keep the target head and fine-tune.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint; `.csv` reports are written as CSV, others JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Keep each sample's best brute-force branch (oracle-assisted).
        #[arg(long)]
        best_of_k: bool,
        /// Failure threshold in percent NME [default: 10].
        #[arg(long)]
        failure_threshold: Option<f64>,
    },
    /// Central-difference check of every layer's gradients.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
    },
    /// Pairwise similarity of the parameter sets in separable layers.
    AnalyzeParams {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                Error::Config(_) | Error::Json(_) | Error::Load { .. } => 2,
                Error::MissingFile(_) => 3,
                Error::Divergence(_) => 4,
                _ => 1,
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Core(e) => match e {
                Error::Dimension(_) => "dimension",
                Error::Parameter(_) => "parameter",
                Error::Config(_) => "config",
                Error::Routing(_) => "routing",
                Error::DegenerateStatistics(_) => "degenerate_statistics",
                Error::State(_) => "state",
                Error::Geometry(_) => "geometry",
                Error::UndefinedSimilarity(_) => "undefined_similarity",
                Error::ZeroNormalizer(_) => "zero_normalizer",
                Error::UndefinedRate(_) => "undefined_rate",
                Error::EmptyDataset(_) => "empty_dataset",
                Error::Load { .. } => "load",
                Error::MissingFile(_) => "missing_file",
                Error::Divergence(_) => "divergence",
                Error::Checkpoint(_) => "checkpoint",
                Error::GradCheck(_) => "gradcheck",
                Error::Io(_) => "io",
                Error::Json(_) => "json",
            },
        }
    }

    /// Single-line JSON for stderr.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({ "error": self.kind(), "exit_code": self.exit_code(), "message": self.to_string() }).to_string()
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    use commands::*;
    match cli.command {
        Command::GenData { config, out } => {
            let ds = cmd_gen_data(&RunConfig::load(&config)?, &out)?;
            println!("wrote {} samples to {}", ds.len(), out.display());
        }
        Command::Train { config, data, out } => {
            cmd_train(&RunConfig::load(&config)?, &data, &out)?;
        }
        Command::CntTrain { config, data, out } => {
            cmd_cnt_train(&RunConfig::load(&config)?, &data, &out)?;
        }
        Command::Finetune { config, checkpoint, data, out } => {
            cmd_finetune(&RunConfig::load(&config)?, &checkpoint, &data, &out)?;
        }
        Command::Eval { checkpoint, data, report, best_of_k, failure_threshold } => {
            let r = cmd_eval(&checkpoint, &data, &report, best_of_k, failure_threshold)?;
            println!(
                "{}",
                serde_json::json!({ "protocol": r.protocol, "samples": r.samples, "nme": r.nme, "failure_rate": r.failure_rate, "oracle_assisted": r.oracle_assisted })
            );
        }
        Command::Gradcheck { config } => {
            cmd_gradcheck(&RunConfig::load(&config)?)?;
        }
        Command::AnalyzeParams { checkpoint, report } => {
            let s = cmd_analyze_params(&checkpoint, &report)?;
            print!("{}", s.modules.to_csv());
            let fmt = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
            println!("mean_tracking,{}\nmean_mapping,{}", fmt(s.mean_tracking), fmt(s.mean_mapping));
        }
    }
    Ok(())
}
