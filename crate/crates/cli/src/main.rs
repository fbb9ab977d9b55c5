mod commands;
mod output;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use soltype_core::boxpath::BoxPathError;
use soltype_core::distortion::DistortionError;
use soltype_core::harness::HarnessError;
use soltype_core::hsv_pipeline::PipelineError;
use soltype_core::qi_maps::QiError;
use soltype_core::{GroupError, MetricError};

/// Experiments on higher-rank Sol-type groups.
///
/// Every command writes a CSV table, an SVG plot and a JSON summary into the
/// output directory. File names are `<command>-<seed>-<sha256 prefix>.<ext>`.
#[derive(Debug, Parser)]
#[command(name = "soltype", version)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Group definition (JSON).
    #[arg(long, global = true)]
    pub group: Option<PathBuf>,
    /// Left-invariant metric: Gram matrix at the identity (JSON).
    #[arg(long, global = true)]
    pub metric: Option<PathBuf>,
    /// Second metric for compare-metrics and delta.
    #[arg(long, global = true)]
    pub metric2: Option<PathBuf>,
    /// Product quasi-isometry for qi-test.
    #[arg(long, global = true)]
    pub qi: Option<PathBuf>,
    /// Sampled pairs per separation.
    #[arg(long, global = true, default_value_t = 10)]
    pub pairs: usize,
    /// Comma-separated separations.
    #[arg(long, global = true, value_delimiter = ',', default_value = "5,10,15,20,25,30,35,40,45,50")]
    pub separations: Vec<f64>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Optimizer iteration budget per distance estimate.
    #[arg(long, global = true, default_value_t = 3000)]
    pub budget: usize,
    /// Worker threads; 0 uses one per core. Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Clone, Args)]
pub struct Pair {
    /// Start point as JSON `{"nil": [[..], ..], "base": [..]}`, standard
    /// coordinates. Defaults to the identity.
    #[arg(long)]
    pub p: Option<String>,
    /// End point, same format.
    #[arg(long)]
    pub q: String,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the group (and metric, if given) and print normalized constants.
    Validate,
    /// Half-spaces of a pair.
    Halfspaces(Pair),
    /// Box geodesic of a pair, with the path dump.
    Rho(Pair),
    /// Distance estimate by path optimization.
    Geodesic(Pair),
    /// Eigenvalue bounds between two metrics on sampled pairs.
    CompareMetrics,
    /// ρ against estimated distance on sampled pairs.
    RhoVsD,
    /// Closed-form Δ against sampled distance ratios.
    Delta,
    /// Rough-isometry test of a product quasi-isometry.
    QiTest,
    /// Half-space-visiting box path from an optimized geodesic.
    SurgeryDemo {
        #[command(flatten)]
        pair: Pair,
        /// Use this r instead of searching for one. Conditions are still
        /// evaluated and reported.
        #[arg(long)]
        r: Option<f64>,
    },
    /// Rebuild a surgery-demo output from its audit trail.
    Replay {
        #[arg(long)]
        audit: PathBuf,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("group: {0}")]
    Group(#[from] GroupError),
    #[error("metric: {0}")]
    Metric(#[from] MetricError),
    #[error("box path: {0}")]
    BoxPath(#[from] BoxPathError),
    #[error("distortion: {0}")]
    Distortion(#[from] DistortionError),
    #[error("harness: {0}")]
    Harness(#[from] HarnessError),
    #[error("qi: {0}")]
    Qi(#[from] QiError),
    #[error("pipeline: {0}")]
    Pipeline(#[from] PipelineError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 2 bad input, 3 invalid definitions, 4 certification failure,
    /// 5 replay mismatch, 1 anything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Io(_) | CliError::Parse(_) | CliError::Qi(QiError::Io(_) | QiError::Json(_)) => 2,
            CliError::Group(_) | CliError::Metric(_) | CliError::Qi(QiError::InvalidSymmetry { .. } | QiError::Shape(_)) => 3,
            CliError::Pipeline(PipelineError::Replay(_)) => 5,
            CliError::Pipeline(_) => 4,
            _ => 1,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.common.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.common.threads)
            .build_global()
            .expect("thread pool is configured once");
    }
    match commands::run(&cli) {
        Ok(summary) => {
            // A closed stdout (e.g. piped into `head`) is not an error.
            let _ = writeln!(std::io::stdout(), "{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code())
        }
    }
}
