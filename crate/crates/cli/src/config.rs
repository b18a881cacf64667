//! Analysis configuration: TOML file, then command-line overrides.

use std::path::Path;

use anyhow::Context;
use bbfdr::densities::PredictiveRecursionConfig;
use bbfdr::stage1::Sidedness;
use bbfdr::{BoostingConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DensitySource {
    KnownWs,
    KnownPs,
    PredictiveRecursion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub alpha_stage1: f64,
    pub alpha_stage2: f64,
    pub folds: usize,
    pub mc_draws: usize,
    pub density_source: DensitySource,
    /// Sidedness of the p-values behind the Benjamini-Hochberg baseline.
    pub sidedness: Sidedness,
    pub seed: u64,
    pub train: TrainConfig,
    pub boosting: BoostingConfig,
    pub predictive_recursion: PredictiveRecursionConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            alpha_stage1: 0.1,
            alpha_stage2: 0.1,
            folds: 3,
            mc_draws: 200,
            density_source: DensitySource::PredictiveRecursion,
            sidedness: Sidedness::TwoSided,
            seed: 0,
            train: TrainConfig::default(),
            boosting: BoostingConfig::default(),
            predictive_recursion: PredictiveRecursionConfig::default(),
        }
    }
}

/// Flag values that take precedence over the config file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// FDR level for the stage this command runs.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub mc_draws: Option<usize>,
    #[arg(long, value_enum)]
    pub density: Option<DensitySource>,
    /// Training epochs per fold network.
    #[arg(long)]
    pub epochs: Option<usize>,
}

/// Which stage an `--alpha` flag refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
}

impl AnalysisConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
    }

    /// Reads the file named by `--config` (if any) and applies the flags.
    pub fn resolve(overrides: &Overrides, stage: Stage) -> Result<Self, CliError> {
        let mut cfg = match &overrides.config {
            Some(path) => Self::from_toml(&read_config(path)?)?,
            None => AnalysisConfig::default(),
        };
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        if let Some(alpha) = overrides.alpha {
            match stage {
                Stage::One => cfg.alpha_stage1 = alpha,
                Stage::Two => cfg.alpha_stage2 = alpha,
            }
        }
        if let Some(folds) = overrides.folds {
            cfg.folds = folds;
        }
        if let Some(draws) = overrides.mc_draws {
            cfg.mc_draws = draws;
        }
        if let Some(density) = overrides.density {
            cfg.density_source = density;
        }
        if let Some(epochs) = overrides.epochs {
            cfg.train.epochs = epochs;
        }
        cfg.train.seed = cfg.seed;
        cfg.predictive_recursion.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        for (name, alpha) in [("alpha_stage1", self.alpha_stage1), ("alpha_stage2", self.alpha_stage2)] {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(CliError::Usage(format!("{name} must lie in (0, 1), got {alpha}")));
            }
        }
        if self.folds < 2 {
            return Err(CliError::Usage(format!("folds must be at least 2, got {}", self.folds)));
        }
        if self.mc_draws == 0 {
            return Err(CliError::Usage("mc_draws must be positive".into()));
        }
        self.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.boosting.validate().map_err(|e| CliError::Usage(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form of the resolved configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

fn read_config(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(|e| CliError::Usage(format!("{e:#}")))
}
