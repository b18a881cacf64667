//! Command-line front end for two-stage covariate-aware FDR analysis.
//!
//! Exit codes: 0 on success, 1 when the pipeline fails (a JSON error object
//! is printed to stderr), 2 for usage and configuration errors.

pub mod commands;
pub mod config;
pub mod dataset;

use std::fmt;
use std::path::PathBuf;

use bbfdr::benchmark::{AlternativeKind, PriorKind};
use clap::{Parser, Subcommand, ValueEnum};

use config::{AnalysisConfig, Overrides, Stage};

/// Environment variable that fixes the worker thread count.
pub const THREADS_ENV: &str = "BBFDR_THREADS";

#[derive(Debug, Parser)]
#[command(name = "bbfdr", version, about = "Covariate-aware false discovery rate control")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct DataArgs {
    /// CSV with columns experiment_id and z.
    #[arg(long)]
    pub z: PathBuf,
    /// CSV with experiment_id and one 0/1 column per covariate.
    #[arg(long)]
    pub x: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "bbfdr_out")]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioArg {
    Constant,
    Linear,
    Nonlinear,
}

impl From<ScenarioArg> for PriorKind {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::Constant => PriorKind::Constant,
            ScenarioArg::Linear => PriorKind::Linear,
            ScenarioArg::Nonlinear => PriorKind::Nonlinear,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AltArg {
    Ws,
    Ps,
}

impl From<AltArg> for AlternativeKind {
    fn from(a: AltArg) -> Self {
        match a {
            AltArg::Ws => AlternativeKind::Ws,
            AltArg::Ps => AlternativeKind::Ps,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the prior networks and select discoveries.
    Stage1(DataArgs),
    /// Test each covariate with conditional randomization tests.
    Stage2 {
        #[command(flatten)]
        data: DataArgs,
        /// Directory holding the stage 1 outputs for this dataset.
        #[arg(long)]
        stage1: PathBuf,
    },
    /// Compare BB-FDR with a covariate-free two-groups model.
    Twogroups(DataArgs),
    /// Run synthetic benchmarks.
    Bench {
        #[arg(long, value_enum, value_delimiter = ',', required = true)]
        scenario: Vec<ScenarioArg>,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "ws")]
        alt: Vec<AltArg>,
        /// Sample sizes, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// Also run stage 2 in every non-constant scenario.
        #[arg(long)]
        stage2: bool,
        #[arg(long, default_value = "bbfdr_bench")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Pipeline(anyhow::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Pipeline(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Pipeline(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Pipeline(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Pipeline(e) => {
                if let Some(core) = e.downcast_ref::<bbfdr::Error>() {
                    core.kind()
                } else if e.downcast_ref::<std::io::Error>().is_some() {
                    "io"
                } else {
                    "pipeline"
                }
            }
        }
    }

    /// `{"error": {"kind": ..., "message": ...}}`
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": { "kind": self.kind(), "message": self.to_string() } }).to_string()
    }
}

/// Applies the thread-count override, if set.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot configure {threads} threads: {e}")))
}

/// Runs a parsed command and returns the files it wrote.
pub fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    match cli.command {
        Command::Stage1(args) => {
            let cfg = AnalysisConfig::resolve(&args.overrides, Stage::One)?;
            let data = dataset::ingest(&args.z, &args.x)?;
            Ok(commands::stage1(&data, &cfg)?.write(&args.out)?)
        }
        Command::Stage2 { data: args, stage1 } => {
            let cfg = AnalysisConfig::resolve(&args.overrides, Stage::Two)?;
            let data = dataset::ingest(&args.z, &args.x)?;
            Ok(commands::stage2(&data, &stage1, &cfg)?.write(&args.out)?)
        }
        Command::Twogroups(args) => {
            let cfg = AnalysisConfig::resolve(&args.overrides, Stage::One)?;
            let data = dataset::ingest(&args.z, &args.x)?;
            Ok(commands::twogroups(&data, &cfg)?.write(&args.out)?)
        }
        Command::Bench { scenario, alt, n, trials, stage2, out, overrides } => {
            let cfg = AnalysisConfig::resolve(&overrides, Stage::One)?;
            if trials == 0 || n.contains(&0) {
                return Err(CliError::Usage("trials and sample sizes must be positive".into()));
            }
            let priors: Vec<PriorKind> = scenario.into_iter().map(Into::into).collect();
            let alts: Vec<AlternativeKind> = alt.into_iter().map(Into::into).collect();
            let grid = commands::bench_grid(&priors, &alts, &n, trials, stage2, &cfg);
            Ok(commands::bench(&grid, cfg.seed)?.write(&out)?)
        }
    }
}
