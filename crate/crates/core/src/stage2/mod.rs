//! Stage 2: conditional randomization tests for covariate importance.
//!
//! For covariate j the observed covariates are compared against copies in
//! which column j is redrawn from a model of `P(X_j | X_{-j})`. The test
//! statistic is the negative entropy of the Stage 1 posteriors, recomputed
//! with the already-trained fold networks.
//!
//! Covariates are binary, so each experiment's posterior takes one of
//! exactly two values under resampling of column j: the observed one, or
//! the one obtained by flipping `X_ij`. Both are computed once per feature
//! and every Monte Carlo draw reduces to summing the entropy changes of the
//! flipped rows. [`CrtContext::statistic_with_column`] recomputes the
//! statistic from scratch and is the reference for that shortcut.

mod boosting;
mod logistic;

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use boosting::{BoostingConfig, GradientBoostedTrees};
pub use logistic::LogisticConditional;

use crate::data::{CovariateMatrix, FoldAssignment};
use crate::densities::LikelihoodTable;
use crate::error::{Error, Result};
use crate::prior_net::{BetaQuadrature, PriorNetwork};
use crate::stage1::{bh_select, fold_posteriors, Posteriors};

/// Smallest and largest conditional probability handed to the sampler.
pub const PROBABILITY_CLAMP: f64 = 1e-6;

/// A model of one covariate given the others.
pub trait ConditionalModel: Send + Sync {
    /// Probability that the target column is one, given a full row (the
    /// target entry itself is ignored).
    fn predict_proba(&self, row: &[u8]) -> f64;
}

/// Which family of conditional model to fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionalKind {
    Boosting(BoostingConfig),
    Logistic,
}

impl Default for ConditionalKind {
    fn default() -> Self {
        ConditionalKind::Boosting(BoostingConfig::default())
    }
}

/// Per-fold conditional models for one feature and the resulting holdout
/// probabilities.
pub struct ConditionalFit {
    pub feature: usize,
    pub models: Vec<Box<dyn ConditionalModel>>,
    /// For each experiment, `P(X_ij = 1 | X_i,-j)` from the model of its own
    /// fold (trained without that fold), clamped away from 0 and 1.
    pub holdout: Vec<f64>,
}

fn clamp_probability(p: f64) -> f64 {
    p.clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP)
}

/// Fits a model of column `j` for every fold on the rows outside it.
pub fn fit_conditional(
    x: &CovariateMatrix,
    j: usize,
    folds: &FoldAssignment,
    kind: &ConditionalKind,
) -> Result<ConditionalFit> {
    if x.m() < 2 {
        return Err(Error::config("conditional models need at least two covariates"));
    }
    if j >= x.m() {
        return Err(Error::input(format!("feature {j} out of range for {} covariates", x.m())));
    }
    if x.n() < folds.k() || folds.n() != x.n() {
        return Err(Error::config(format!(
            "{} experiments cannot be split into {} folds",
            x.n(),
            folds.k()
        )));
    }
    let first = x.get(0, j);
    if (1..x.n()).all(|i| x.get(i, j) == first) {
        return Err(Error::config(format!("covariate {j} is constant")));
    }
    let mut models: Vec<Box<dyn ConditionalModel>> = Vec::with_capacity(folds.k());
    let mut holdout = vec![0.0; x.n()];
    for f in 0..folds.k() {
        let train_rows = folds.training_rows(f);
        let model: Box<dyn ConditionalModel> = match kind {
            ConditionalKind::Boosting(cfg) => Box::new(GradientBoostedTrees::fit(x, j, &train_rows, cfg)?),
            ConditionalKind::Logistic => Box::new(LogisticConditional::fit(x, j, &train_rows)?),
        };
        for i in folds.members(f) {
            holdout[i] = clamp_probability(model.predict_proba(x.row(i)));
        }
        models.push(model);
    }
    Ok(ConditionalFit { feature: j, models, holdout })
}

/// `sum w log w + (1 - w) log(1 - w)` with `0 log 0 = 0`.
pub fn neg_entropy_statistic(posteriors: &[f64]) -> f64 {
    posteriors.iter().map(|&w| entropy_term(w)).sum()
}

fn entropy_term(w: f64) -> f64 {
    let xlogx = |v: f64| if v > 0.0 { v * v.ln() } else { 0.0 };
    xlogx(w) + xlogx(1.0 - w)
}

/// Everything the randomization tests share: data, fold networks and the
/// observed posteriors.
pub struct CrtContext<'a> {
    x: &'a CovariateMatrix,
    lik: &'a LikelihoodTable,
    folds: &'a FoldAssignment,
    nets: Vec<&'a PriorNetwork>,
    quad: BetaQuadrature,
    observed: Posteriors,
    observed_terms: Vec<f64>,
    fold_rows: Vec<Vec<usize>>,
}

impl<'a> CrtContext<'a> {
    pub fn new(
        x: &'a CovariateMatrix,
        lik: &'a LikelihoodTable,
        folds: &'a FoldAssignment,
        nets: Vec<&'a PriorNetwork>,
        quadrature_points: usize,
    ) -> Result<Self> {
        let quad = BetaQuadrature::new(quadrature_points)?;
        let observed = crate::stage1::compute_posteriors(&nets, folds, x, lik, &quad)?;
        let observed_terms = observed.as_slice().iter().map(|&w| entropy_term(w)).collect();
        let fold_rows = (0..folds.k()).map(|f| folds.members(f)).collect();
        Ok(CrtContext { x, lik, folds, nets, quad, observed, observed_terms, fold_rows })
    }

    pub fn observed_posteriors(&self) -> &Posteriors {
        &self.observed
    }

    pub fn observed_statistic(&self) -> f64 {
        self.observed_terms.iter().sum()
    }

    pub fn covariates(&self) -> &CovariateMatrix {
        self.x
    }

    pub fn folds(&self) -> &FoldAssignment {
        self.folds
    }

    /// Change in each experiment's entropy term when `X_ij` is flipped.
    pub fn flip_deltas(&self, j: usize) -> Result<Vec<f64>> {
        if j >= self.x.m() {
            return Err(Error::input(format!("feature {j} out of range")));
        }
        let mut deltas = vec![0.0; self.x.n()];
        for (f, rows) in self.fold_rows.iter().enumerate() {
            let mut inputs = self.x.rows_f64(rows);
            inputs.column_mut(j).mapv_inplace(|v| 1.0 - v);
            let flipped = fold_posteriors(self.nets[f], rows, &inputs, self.lik, &self.quad)?;
            for (&i, w) in rows.iter().zip(flipped) {
                deltas[i] = entropy_term(w) - self.observed_terms[i];
            }
        }
        Ok(deltas)
    }

    /// Statistic with column j replaced by `column`, recomputed through the
    /// fold networks without any shortcut.
    pub fn statistic_with_column(&self, j: usize, column: &[u8]) -> Result<f64> {
        if column.len() != self.x.n() {
            return Err(Error::input("replacement column has the wrong length"));
        }
        let mut total = 0.0;
        for (f, rows) in self.fold_rows.iter().enumerate() {
            let mut inputs = self.x.rows_f64(rows);
            for (r, &i) in rows.iter().enumerate() {
                inputs[[r, j]] = f64::from(column[i]);
            }
            total += neg_entropy_statistic(&fold_posteriors(self.nets[f], rows, &inputs, self.lik, &self.quad)?);
        }
        Ok(total)
    }
}

fn feature_rng(seed: u64, j: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(j as u64);
    rng
}

/// Draws one resampled column: entry i is one with probability `probs[i]`.
pub fn resample_column<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Vec<u8> {
    probs.iter().map(|&p| u8::from(rng.random::<f64>() < p)).collect()
}

/// Randomization p-value `(1 + #{t~ >= t_obs}) / (1 + draws)` for feature j.
///
/// `conditional` holds each experiment's holdout probability that `X_ij = 1`.
pub fn crt_pvalue(
    ctx: &CrtContext<'_>,
    j: usize,
    conditional: &[f64],
    mc_draws: usize,
    seed: u64,
) -> Result<f64> {
    if mc_draws == 0 {
        return Err(Error::config("need at least one Monte Carlo draw"));
    }
    if conditional.len() != ctx.x.n() {
        return Err(Error::input("conditional probabilities must cover every experiment"));
    }
    let deltas = ctx.flip_deltas(j)?;
    let observed: Vec<u8> = ctx.x.column(j);
    let mut rng = feature_rng(seed, j);
    let mut exceed = 0usize;
    for _ in 0..mc_draws {
        let draw = resample_column(conditional, &mut rng);
        // t~ - t_obs is the sum of entropy changes over the flipped rows
        let change: f64 = draw
            .iter()
            .zip(&observed)
            .zip(&deltas)
            .filter(|((d, o), _)| d != o)
            .map(|(_, &delta)| delta)
            .sum();
        if change >= 0.0 {
            exceed += 1;
        }
    }
    Ok((1 + exceed) as f64 / (1 + mc_draws) as f64)
}

/// Per-feature p-values and the Benjamini-Hochberg selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Report {
    pub p_values: Vec<f64>,
    pub selected: Vec<bool>,
    pub observed_statistic: f64,
    pub mc_draws: usize,
    pub alpha: f64,
}

impl Stage2Report {
    pub fn selected_count(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }

    /// `feature_id,feature_name,p_value,selected` rows.
    pub fn write_csv<W: Write>(&self, names: &[String], mut out: W) -> Result<()> {
        if names.len() != self.p_values.len() {
            return Err(Error::input("feature names must match the report length"));
        }
        writeln!(out, "feature_id,feature_name,p_value,selected")?;
        for (j, name) in names.iter().enumerate() {
            writeln!(out, "{j},{name},{},{}", self.p_values[j], u8::from(self.selected[j]))?;
        }
        Ok(())
    }
}

/// Tests every covariate and applies BH at `alpha`.
pub fn stage2_select(
    ctx: &CrtContext<'_>,
    kind: &ConditionalKind,
    mc_draws: usize,
    alpha: f64,
    seed: u64,
) -> Result<Stage2Report> {
    let p_values = (0..ctx.x.m())
        .into_par_iter()
        .map(|j| {
            let fit = fit_conditional(ctx.x, j, ctx.folds, kind)?;
            crt_pvalue(ctx, j, &fit.holdout, mc_draws, seed)
        })
        .collect::<Result<Vec<f64>>>()?;
    let selected = bh_select(&p_values, alpha)?;
    Ok(Stage2Report {
        p_values,
        selected,
        observed_statistic: ctx.observed_statistic(),
        mc_draws,
        alpha,
    })
}
