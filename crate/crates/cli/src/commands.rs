//! Subcommand implementations. Each command computes every output in
//! memory first and only then writes files, so a failed run leaves the
//! output directory untouched.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use bbfdr::benchmark::{run_benchmark, AlternativeKind, PriorKind, ScenarioConfig};
use bbfdr::densities::fit_predictive_recursion;
use bbfdr::prior_net::train;
use bbfdr::stage1::{bh_select, compute_posteriors, fit_global_prior, global_posteriors, step_down_select, z_to_pvalue};
use bbfdr::stage2::{stage2_select, CrtContext};
use bbfdr::{
    Alternative, BetaQuadrature, ConditionalKind, FoldAssignment, LikelihoodTable, Posteriors, PriorNetwork,
    Stage1Report, TrainedNetwork, TwoGroupsDensities, SCHEMA_VERSION,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{AnalysisConfig, DensitySource};
use crate::dataset::Dataset;

pub const POSTERIORS_FILE: &str = "stage1_posteriors.csv";
pub const STAGE1_SUMMARY_FILE: &str = "stage1_summary.json";
pub const MODEL_FILE: &str = "stage1_model.json";
pub const DENSITY_FILE: &str = "alternative_density.csv";
pub const PVALUES_FILE: &str = "stage2_pvalues.csv";
pub const STAGE2_SUMMARY_FILE: &str = "stage2_summary.json";
pub const TWOGROUPS_FILE: &str = "twogroups_summary.json";
pub const BENCH_TRIALS_FILE: &str = "bench_trials.csv";
pub const BENCH_AGGREGATE_FILE: &str = "bench_aggregate.csv";
pub const BENCH_SUMMARY_FILE: &str = "bench_summary.json";
pub const BENCH_PLOT_FILE: &str = "bench_plot.svg";

/// Files produced by a command, written together at the end.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    fn add_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.add(name, bytes);
        Ok(())
    }

    pub fn names(&self) -> Vec<&str> {
        self.files.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        self.files
            .iter()
            .map(|(name, bytes)| {
                let path = dir.join(name);
                fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
                Ok(path)
            })
            .collect()
    }
}

/// Stage 1 artifacts needed to run Stage 2 later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Model {
    pub schema_version: u32,
    pub dataset_hash: String,
    pub config_hash: String,
    pub seed: u64,
    pub quadrature_points: usize,
    pub densities: TwoGroupsDensities,
    pub folds: FoldAssignment,
    pub networks: Vec<PriorNetwork>,
}

/// Everything Stage 1 computes for a dataset.
pub struct Stage1Fit {
    pub densities: TwoGroupsDensities,
    pub null_proportion: Option<f64>,
    pub likelihoods: LikelihoodTable,
    pub folds: FoldAssignment,
    pub networks: Vec<TrainedNetwork>,
    pub report: Stage1Report,
    pub bh_rejected: Vec<bool>,
}

fn densities_for(data: &Dataset, cfg: &AnalysisConfig) -> Result<(TwoGroupsDensities, Option<f64>)> {
    Ok(match cfg.density_source {
        DensitySource::KnownWs => (TwoGroupsDensities::new(Alternative::WellSeparated), None),
        DensitySource::KnownPs => (TwoGroupsDensities::new(Alternative::PoorlySeparated), None),
        DensitySource::PredictiveRecursion => {
            let fit = fit_predictive_recursion(&data.z, &cfg.predictive_recursion)?;
            (TwoGroupsDensities::new(Alternative::Estimated(fit.alternative)), Some(fit.null_proportion))
        }
    })
}

/// Fits densities, trains the fold networks and selects discoveries.
pub fn fit_stage1(data: &Dataset, cfg: &AnalysisConfig) -> Result<Stage1Fit> {
    let (densities, null_proportion) = densities_for(data, cfg)?;
    let likelihoods = densities.likelihoods(&data.z);
    let folds = FoldAssignment::random(data.n(), cfg.folds, cfg.seed)?;
    let networks = train(&data.x, &likelihoods, &folds, &cfg.train)?;
    let quad = BetaQuadrature::new(cfg.train.quadrature_points)?;
    let nets: Vec<&PriorNetwork> = networks.iter().map(|t| &t.network).collect();
    let posteriors = compute_posteriors(&nets, &folds, &data.x, &likelihoods, &quad)?;
    let report = step_down_select(&posteriors, cfg.alpha_stage1)?;
    let p: Vec<f64> = data.z.as_slice().iter().map(|&z| z_to_pvalue(z, cfg.sidedness)).collect();
    let bh_rejected = bh_select(&p, cfg.alpha_stage1)?;
    Ok(Stage1Fit { densities, null_proportion, likelihoods, folds, networks, report, bh_rejected })
}

#[derive(Debug, Serialize)]
struct Stage1Summary<'a> {
    schema_version: u32,
    config_hash: String,
    dataset_hash: String,
    seed: u64,
    n: usize,
    m: usize,
    alpha: f64,
    q: usize,
    expected_fdp: f64,
    bh_discoveries: usize,
    density_source: DensitySource,
    null_proportion: Option<f64>,
    dropped_features: &'a [String],
    final_training_loss: Vec<Option<f64>>,
}

pub fn stage1(data: &Dataset, cfg: &AnalysisConfig) -> Result<Outputs> {
    let fit = fit_stage1(data, cfg)?;
    let (config_hash, dataset_hash) = (cfg.hash(), data.hash());
    let mut out = Outputs::default();

    let mut csv = Vec::new();
    fit.report.write_csv(&data.experiment_ids, &data.z, &mut csv)?;
    out.add(POSTERIORS_FILE, csv);
    out.add_json(
        STAGE1_SUMMARY_FILE,
        &Stage1Summary {
            schema_version: SCHEMA_VERSION,
            config_hash: config_hash.clone(),
            dataset_hash: dataset_hash.clone(),
            seed: cfg.seed,
            n: data.n(),
            m: data.m(),
            alpha: cfg.alpha_stage1,
            q: fit.report.discoveries(),
            expected_fdp: fit.report.expected_fdp,
            bh_discoveries: fit.bh_rejected.iter().filter(|&&r| r).count(),
            density_source: cfg.density_source,
            null_proportion: fit.null_proportion,
            dropped_features: &data.dropped_features,
            final_training_loss: fit.networks.iter().map(|t| t.epoch_losses.last().copied()).collect(),
        },
    )?;
    if let Alternative::Estimated(grid) = &fit.densities.alternative {
        let mut csv = Vec::new();
        grid.write_csv(&mut csv)?;
        out.add(DENSITY_FILE, csv);
    }
    out.add_json(
        MODEL_FILE,
        &Stage1Model {
            schema_version: SCHEMA_VERSION,
            dataset_hash,
            config_hash,
            seed: cfg.seed,
            quadrature_points: cfg.train.quadrature_points,
            densities: fit.densities,
            folds: fit.folds,
            networks: fit.networks.into_iter().map(|t| t.network).collect(),
        },
    )?;
    Ok(out)
}

/// Loads Stage 1 artifacts and checks they belong to `data`.
pub fn load_stage1_model(dir: &Path, data: &Dataset) -> Result<Stage1Model> {
    let path = dir.join(MODEL_FILE);
    let text = fs::read(&path).map_err(|e| {
        anyhow!("stage 1 artifacts not found at {} ({e}); run `bbfdr stage1` on this dataset first", path.display())
    })?;
    let model: Stage1Model = serde_json::from_slice(&text)
        .with_context(|| format!("{} is not a valid stage 1 model; rerun `bbfdr stage1`", path.display()))?;
    if model.schema_version != SCHEMA_VERSION {
        bail!(
            "{} has schema version {}, expected {SCHEMA_VERSION}; rerun `bbfdr stage1`",
            path.display(),
            model.schema_version
        );
    }
    let hash = data.hash();
    if model.dataset_hash != hash {
        bail!(
            "stage 1 artifacts in {} were built from a different dataset (hash {} vs {hash}); rerun `bbfdr stage1`",
            dir.display(),
            model.dataset_hash
        );
    }
    if model.networks.len() != model.folds.k() || model.folds.n() != data.n() {
        bail!("stage 1 artifacts in {} are inconsistent; rerun `bbfdr stage1`", dir.display());
    }
    Ok(model)
}

#[derive(Debug, Serialize)]
struct Stage2Summary<'a> {
    schema_version: u32,
    config_hash: String,
    dataset_hash: String,
    stage1_config_hash: &'a str,
    seed: u64,
    observed_statistic: f64,
    mc_draws: usize,
    alpha: f64,
    boosting: &'a bbfdr::BoostingConfig,
    selected_features: Vec<&'a str>,
}

pub fn stage2(data: &Dataset, stage1_dir: &Path, cfg: &AnalysisConfig) -> Result<Outputs> {
    let model = load_stage1_model(stage1_dir, data)?;
    if data.m() < 2 {
        bail!("stage 2 needs at least two covariates, found {}", data.m());
    }
    let lik = model.densities.likelihoods(&data.z);
    let ctx = CrtContext::new(&data.x, &lik, &model.folds, model.networks.iter().collect(), model.quadrature_points)?;
    let kind = ConditionalKind::Boosting(cfg.boosting.clone());
    let report = stage2_select(&ctx, &kind, cfg.mc_draws, cfg.alpha_stage2, cfg.seed)?;

    let mut out = Outputs::default();
    let mut csv = Vec::new();
    report.write_csv(&data.feature_names, &mut csv)?;
    out.add(PVALUES_FILE, csv);
    out.add_json(
        STAGE2_SUMMARY_FILE,
        &Stage2Summary {
            schema_version: SCHEMA_VERSION,
            config_hash: cfg.hash(),
            dataset_hash: model.dataset_hash.clone(),
            stage1_config_hash: &model.config_hash,
            seed: cfg.seed,
            observed_statistic: report.observed_statistic,
            mc_draws: report.mc_draws,
            alpha: report.alpha,
            boosting: &cfg.boosting,
            selected_features: data
                .feature_names
                .iter()
                .zip(&report.selected)
                .filter(|(_, &s)| s)
                .map(|(n, _)| n.as_str())
                .collect(),
        },
    )?;
    Ok(out)
}

/// Discovery gain under which the covariates are reported as uninformative.
pub const INFORMATIVE_GAIN: f64 = 1.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoGroupsSummary {
    pub schema_version: u32,
    pub config_hash: String,
    pub dataset_hash: String,
    pub seed: u64,
    pub alpha: f64,
    pub bb_fdr_discoveries: usize,
    pub global_discoveries: usize,
    pub global_prior: f64,
    pub covariates_informative: bool,
    pub recommendation: String,
}

pub fn twogroups(data: &Dataset, cfg: &AnalysisConfig) -> Result<Outputs> {
    let fit = fit_stage1(data, cfg)?;
    let c = fit_global_prior(&fit.likelihoods)?;
    let global = step_down_select(&Posteriors::new(global_posteriors(&fit.likelihoods, c))?, cfg.alpha_stage1)?;
    let (bb, gl) = (fit.report.discoveries(), global.discoveries());
    let informative = bb > gl && bb as f64 >= INFORMATIVE_GAIN * gl as f64;
    let recommendation = if informative {
        format!("BB-FDR finds {bb} discoveries against {gl} for the covariate-free two-groups model; the covariates carry information about the prior.")
    } else {
        format!("BB-FDR finds {bb} discoveries against {gl} for the covariate-free two-groups model. The gap is small, so the covariates may be uninformative; check the covariate encoding or prefer the simpler global model.")
    };
    let mut out = Outputs::default();
    out.add_json(
        TWOGROUPS_FILE,
        &TwoGroupsSummary {
            schema_version: SCHEMA_VERSION,
            config_hash: cfg.hash(),
            dataset_hash: data.hash(),
            seed: cfg.seed,
            alpha: cfg.alpha_stage1,
            bb_fdr_discoveries: bb,
            global_discoveries: gl,
            global_prior: c,
            covariates_informative: informative,
            recommendation,
        },
    )?;
    Ok(out)
}

/// Scenario grid: every combination of prior, alternative and sample size.
pub fn bench_grid(
    priors: &[PriorKind],
    alternatives: &[AlternativeKind],
    sizes: &[usize],
    trials: usize,
    stage2: bool,
    cfg: &AnalysisConfig,
) -> Vec<ScenarioConfig> {
    let mut grid = Vec::new();
    for &prior in priors {
        for &alt in alternatives {
            for &n in sizes {
                let mut s = ScenarioConfig::new(prior, alt, n, trials);
                s.base_seed = cfg.seed;
                s.alpha = cfg.alpha_stage1;
                s.folds = cfg.folds;
                s.mc_draws = cfg.mc_draws;
                s.stage2 = stage2;
                s.train = cfg.train.clone();
                s.boosting = cfg.boosting.clone();
                grid.push(s);
            }
        }
    }
    grid
}

#[derive(Debug, Serialize)]
struct BenchSummary<'a> {
    schema_version: u32,
    config_hash: String,
    seed: u64,
    failures: usize,
    grid: &'a [ScenarioConfig],
    results: &'a bbfdr::benchmark::BenchmarkTable,
}

pub fn bench(grid: &[ScenarioConfig], seed: u64) -> Result<Outputs> {
    let table = run_benchmark(grid)?;
    if table.trials.iter().all(|t| t.metrics.is_none()) {
        let first = table.trials.iter().find_map(|t| t.error.clone()).unwrap_or_default();
        bail!("every benchmark trial failed; first error: {first}");
    }
    let grid_json = serde_json::to_vec(grid)?;
    let mut out = Outputs::default();
    let mut buf = Vec::new();
    table.write_trials_csv(&mut buf)?;
    out.add(BENCH_TRIALS_FILE, buf);
    let mut buf = Vec::new();
    table.write_aggregate_csv(&mut buf)?;
    out.add(BENCH_AGGREGATE_FILE, buf);
    let mut buf = Vec::new();
    table.write_svg(&mut buf)?;
    out.add(BENCH_PLOT_FILE, buf);
    out.add_json(
        BENCH_SUMMARY_FILE,
        &BenchSummary {
            schema_version: SCHEMA_VERSION,
            config_hash: hex::encode(Sha256::digest(&grid_json)),
            seed,
            failures: table.failure_count(),
            grid,
            results: &table,
        },
    )?;
    Ok(out)
}
