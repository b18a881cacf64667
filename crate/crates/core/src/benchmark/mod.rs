//! Multi-trial benchmarks on synthetic scenarios with known ground truth.

mod generators;
mod report;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use generators::{
    generate, generate_constant, generate_linear, generate_nonlinear, AlternativeKind, PriorKind,
    SyntheticDataset, LATENT_COUNT, PAIRS_PER_LOGIT,
};
pub use report::{AggregateRow, BenchmarkTable, MetricSummary, TrialRow};

use crate::data::FoldAssignment;
use crate::densities::TwoGroupsDensities;
use crate::error::{Error, Result};
use crate::prior_net::{self, BetaQuadrature, TrainConfig};
use crate::stage1::{self, Sidedness};
use crate::stage2::{self, BoostingConfig, ConditionalKind, CrtContext};

/// One benchmark scenario at one sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub prior_kind: PriorKind,
    pub alternative_kind: AlternativeKind,
    pub n: usize,
    pub m: usize,
    pub signal_count: usize,
    pub trial_count: usize,
    pub base_seed: u64,
    pub alpha: f64,
    /// Run the randomization tests after Stage 1. Ignored for the constant
    /// prior, which has no signal features.
    pub stage2: bool,
    pub folds: usize,
    pub mc_draws: usize,
    pub train: TrainConfig,
    pub boosting: BoostingConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            prior_kind: PriorKind::Linear,
            alternative_kind: AlternativeKind::Ws,
            n: 10_000,
            m: 50,
            signal_count: 25,
            trial_count: 20,
            base_seed: 0,
            alpha: 0.1,
            stage2: false,
            folds: 3,
            mc_draws: 200,
            train: TrainConfig::default(),
            boosting: BoostingConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn new(prior_kind: PriorKind, alternative_kind: AlternativeKind, n: usize, trial_count: usize) -> Self {
        let signal_count = if prior_kind == PriorKind::Constant { 0 } else { 25 };
        ScenarioConfig { prior_kind, alternative_kind, n, trial_count, signal_count, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.signal_count > self.m {
            return Err(Error::config(format!("signal_count {} exceeds m = {}", self.signal_count, self.m)));
        }
        if self.prior_kind == PriorKind::Constant && self.signal_count != 0 {
            return Err(Error::config("the constant prior has no signal features"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.folds < 2 {
            return Err(Error::config("at least two folds are required"));
        }
        if self.stage2 && self.mc_draws == 0 {
            return Err(Error::config("stage 2 needs at least one Monte Carlo draw"));
        }
        self.train.validate()?;
        self.boosting.validate()
    }

    /// Short name such as `linear/ws`.
    pub fn label(&self) -> String {
        let prior = match self.prior_kind {
            PriorKind::Constant => "constant",
            PriorKind::Linear => "linear",
            PriorKind::Nonlinear => "nonlinear",
        };
        let alt = match self.alternative_kind {
            AlternativeKind::Ws => "ws",
            AlternativeKind::Ps => "ps",
        };
        format!("{prior}/{alt}")
    }

    pub fn trial_seed(&self, trial_index: usize) -> u64 {
        self.base_seed.wrapping_add(trial_index as u64)
    }

    fn runs_stage2(&self) -> bool {
        self.stage2 && self.prior_kind != PriorKind::Constant
    }
}

/// Ground-truth metrics from a single trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub stage1_fdp: f64,
    pub stage1_tpr: f64,
    pub bh_fdp: f64,
    pub bh_tpr: f64,
    pub stage2_fdp: Option<f64>,
    pub stage2_tpr: Option<f64>,
    pub discoveries: usize,
    pub bh_discoveries: usize,
}

/// False discovery proportion and true positive rate of `selected` against
/// `truth`, with `0/0 = 0` for both.
pub fn fdp_tpr(selected: &[bool], truth: &[bool]) -> Result<(f64, f64)> {
    if selected.len() != truth.len() {
        return Err(Error::input("selection and truth differ in length"));
    }
    let (mut hits, mut picked, mut positives) = (0usize, 0usize, 0usize);
    for (&s, &t) in selected.iter().zip(truth) {
        picked += usize::from(s);
        positives += usize::from(t);
        hits += usize::from(s && t);
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    Ok((ratio(picked - hits, picked), ratio(hits, positives)))
}

/// Runs one trial of `cfg` with seed `base_seed + trial_index`.
pub fn run_trial(cfg: &ScenarioConfig, trial_index: usize) -> Result<TrialMetrics> {
    cfg.validate()?;
    run_trial_inner(cfg, trial_index).map_err(|e| Error::Trial { trial: trial_index, source: Box::new(e) })
}

fn run_trial_inner(cfg: &ScenarioConfig, trial_index: usize) -> Result<TrialMetrics> {
    let seed = cfg.trial_seed(trial_index);
    let data = generate(cfg.prior_kind, cfg.n, cfg.m, cfg.signal_count, cfg.alternative_kind, seed)?;
    let lik = TwoGroupsDensities::new(cfg.alternative_kind.densities()).likelihoods(&data.z);
    let folds = FoldAssignment::random(cfg.n, cfg.folds, seed)?;
    let train_cfg = TrainConfig { seed, ..cfg.train.clone() };
    let trained = prior_net::train(&data.x, &lik, &folds, &train_cfg)?;
    let nets: Vec<_> = trained.iter().map(|t| &t.network).collect();
    let quad = BetaQuadrature::new(train_cfg.quadrature_points)?;
    let posteriors = stage1::compute_posteriors(&nets, &folds, &data.x, &lik, &quad)?;
    let report = stage1::step_down_select(&posteriors, cfg.alpha)?;
    let p_values: Vec<f64> = data
        .z
        .as_slice()
        .iter()
        .map(|&z| stage1::z_to_pvalue(z, Sidedness::TwoSided))
        .collect();
    let bh = stage1::bh_select(&p_values, cfg.alpha)?;

    let (stage1_fdp, stage1_tpr) = fdp_tpr(&report.rejected, &data.h_true)?;
    let (bh_fdp, bh_tpr) = fdp_tpr(&bh, &data.h_true)?;
    let (stage2_fdp, stage2_tpr) = if cfg.runs_stage2() {
        let ctx = CrtContext::new(&data.x, &lik, &folds, nets, train_cfg.quadrature_points)?;
        let s2 = stage2::stage2_select(&ctx, &ConditionalKind::Boosting(cfg.boosting.clone()), cfg.mc_draws, cfg.alpha, seed)?;
        let (f, t) = fdp_tpr(&s2.selected, &data.signal_features)?;
        (Some(f), Some(t))
    } else {
        (None, None)
    };
    Ok(TrialMetrics {
        stage1_fdp,
        stage1_tpr,
        bh_fdp,
        bh_tpr,
        stage2_fdp,
        stage2_tpr,
        discoveries: report.discoveries(),
        bh_discoveries: bh.iter().filter(|&&s| s).count(),
    })
}

/// Runs every trial of every scenario. Failed trials are kept in the table
/// and excluded from the aggregates.
pub fn run_benchmark(grid: &[ScenarioConfig]) -> Result<BenchmarkTable> {
    if grid.is_empty() {
        return Err(Error::config("benchmark grid is empty"));
    }
    for cfg in grid {
        cfg.validate()?;
    }
    let jobs: Vec<(usize, usize)> = grid
        .iter()
        .enumerate()
        .flat_map(|(s, cfg)| (0..cfg.trial_count).map(move |t| (s, t)))
        .collect();
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(s, t)| {
            let outcome = run_trial(&grid[s], t);
            if let Err(e) = &outcome {
                log::warn!("{} n={} trial {t} failed: {e}", grid[s].label(), grid[s].n);
            }
            (s, t, outcome)
        })
        .collect();
    Ok(BenchmarkTable::from_results(grid, results))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_conventions() {
        assert_eq!(fdp_tpr(&[false, false], &[true, false]).unwrap(), (0.0, 0.0));
        assert_eq!(fdp_tpr(&[true, false], &[true, false]).unwrap(), (0.0, 1.0));
        assert_eq!(fdp_tpr(&[true, true, false], &[true, false, true]).unwrap(), (0.5, 0.5));
        assert_eq!(fdp_tpr(&[true], &[false]).unwrap(), (1.0, 0.0));
        assert!(fdp_tpr(&[true], &[]).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = ScenarioConfig::new(PriorKind::Constant, AlternativeKind::Ws, 100, 1);
        assert_eq!(cfg.signal_count, 0);
        cfg.validate().unwrap();
        cfg.signal_count = 3;
        assert!(cfg.validate().is_err());
        let cfg = ScenarioConfig { m: 5, signal_count: 6, ..Default::default() };
        assert!(cfg.validate().is_err());
        assert_eq!(ScenarioConfig::new(PriorKind::Nonlinear, AlternativeKind::Ps, 10, 1).label(), "nonlinear/ps");
    }

    #[test]
    fn empty_grid_is_rejected() {
        assert!(run_benchmark(&[]).is_err());
    }
}
