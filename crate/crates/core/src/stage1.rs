//! Stage 1: posterior alternative probabilities and discovery selection.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::data::{CovariateMatrix, FoldAssignment, ZScores};
use crate::densities::LikelihoodTable;
use crate::error::{Error, Result};
use crate::prior_net::{BetaParams, BetaQuadrature, PriorNetwork};

/// Posterior probability that each experiment came from the alternative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posteriors(Vec<f64>);

impl Posteriors {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::input(format!("posterior {} at index {i} outside [0, 1]", values[i])));
        }
        Ok(Posteriors(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Posterior for a single experiment with `points` quadrature nodes.
pub fn posterior(params: BetaParams, f0: f64, f1: f64, points: usize) -> Result<f64> {
    BetaQuadrature::new(points)?.posterior(params, f0, f1)
}

/// Posteriors where experiment i is scored by the network trained without
/// i's fold. `nets[f]` must be the network for fold f.
pub fn compute_posteriors(
    nets: &[&PriorNetwork],
    folds: &FoldAssignment,
    x: &CovariateMatrix,
    lik: &LikelihoodTable,
    quad: &BetaQuadrature,
) -> Result<Posteriors> {
    if nets.len() != folds.k() {
        return Err(Error::config(format!(
            "{} networks supplied for {} folds",
            nets.len(),
            folds.k()
        )));
    }
    if folds.n() != x.n() || lik.len() != x.n() {
        return Err(Error::config("folds, covariates and likelihoods disagree on experiment count"));
    }
    let mut out = vec![0.0; x.n()];
    for (f, net) in nets.iter().enumerate() {
        let rows = folds.members(f);
        let values = fold_posteriors(net, &rows, &x.rows_f64(&rows), lik, quad)?;
        for (&i, v) in rows.iter().zip(values) {
            out[i] = v;
        }
    }
    Posteriors::new(out)
}

/// Evaluation-mode posteriors for `rows`, whose covariates are `inputs`.
pub(crate) fn fold_posteriors(
    net: &PriorNetwork,
    rows: &[usize],
    inputs: &ndarray::Array2<f64>,
    lik: &LikelihoodTable,
    quad: &BetaQuadrature,
) -> Result<Vec<f64>> {
    if inputs.ncols() != net.input_dim() {
        return Err(Error::config("network input dimension does not match covariates"));
    }
    let params = net.predict_batch(inputs.view());
    let mut w = Vec::with_capacity(quad.len());
    Ok(rows
        .iter()
        .zip(params)
        .map(|(&i, p)| {
            quad.weights_into(p, &mut w);
            quad.posterior_with_weights(&w, lik.f0[i], lik.f1[i])
        })
        .collect())
}

/// Discoveries from the step-down procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Report {
    pub posteriors: Posteriors,
    pub rejected: Vec<bool>,
    pub alpha: f64,
    /// Expected false discovery proportion of the rejected set.
    pub expected_fdp: f64,
}

impl Stage1Report {
    pub fn discoveries(&self) -> usize {
        self.rejected.iter().filter(|&&r| r).count()
    }

    /// `experiment_id,z,posterior,rejected` rows.
    pub fn write_csv<W: Write>(&self, ids: &[String], z: &ZScores, mut out: W) -> Result<()> {
        if ids.len() != self.rejected.len() || z.len() != self.rejected.len() {
            return Err(Error::input("ids and z-scores must match the report length"));
        }
        writeln!(out, "experiment_id,z,posterior,rejected")?;
        for (i, id) in ids.iter().enumerate() {
            writeln!(
                out,
                "{id},{},{},{}",
                z.get(i),
                self.posteriors.0[i],
                u8::from(self.rejected[i])
            )?;
        }
        Ok(())
    }
}

/// Descending-posterior order with ties broken by ascending index.
fn descending_order(w: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&i, &j| w[j].total_cmp(&w[i]).then(i.cmp(&j)));
    order
}

/// Rejects the q largest posteriors with q the largest count whose mean
/// `1 - w` does not exceed alpha.
pub fn step_down_select(posteriors: &Posteriors, alpha: f64) -> Result<Stage1Report> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::input(format!("alpha {alpha} outside (0, 1)")));
    }
    let w = posteriors.as_slice();
    let order = descending_order(w);
    let mut cumulative = 0.0;
    let (mut q, mut fdp_at_q) = (0, 0.0);
    for (pos, &i) in order.iter().enumerate() {
        cumulative += 1.0 - w[i];
        let fdp = cumulative / (pos + 1) as f64;
        if fdp <= alpha {
            q = pos + 1;
            fdp_at_q = fdp;
        }
    }
    let mut rejected = vec![false; w.len()];
    for &i in &order[..q] {
        rejected[i] = true;
    }
    Ok(Stage1Report {
        posteriors: posteriors.clone(),
        rejected,
        alpha,
        expected_fdp: fdp_at_q,
    })
}

/// Benjamini-Hochberg: reject every p-value at or below the largest
/// order statistic with `p_(k) <= k alpha / n`.
pub fn bh_select(p_values: &[f64], alpha: f64) -> Result<Vec<bool>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::input(format!("alpha {alpha} outside (0, 1)")));
    }
    if let Some(i) = p_values.iter().position(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::input(format!("p-value {} at index {i} outside [0, 1]", p_values[i])));
    }
    let n = p_values.len();
    let mut sorted = p_values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let threshold = (1..=n)
        .rev()
        .find(|&k| sorted[k - 1] <= k as f64 * alpha / n as f64)
        .map(|k| sorted[k - 1]);
    Ok(match threshold {
        Some(t) => p_values.iter().map(|&p| p <= t).collect(),
        None => vec![false; n],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    #[default]
    TwoSided,
    /// Small p-values for large positive z.
    Upper,
    /// Small p-values for large negative z.
    Lower,
}

/// Normal-theory p-value for a z-score.
pub fn z_to_pvalue(z: f64, sides: Sidedness) -> f64 {
    let upper_tail = |x: f64| 0.5 * erfc(x / std::f64::consts::SQRT_2);
    match sides {
        Sidedness::TwoSided => (2.0 * upper_tail(z.abs())).min(1.0),
        Sidedness::Upper => upper_tail(z),
        Sidedness::Lower => upper_tail(-z),
    }
}

/// Covariate-free two-groups model: one shared prior probability `c`,
/// estimated by EM with the densities held fixed.
pub fn fit_global_prior(lik: &LikelihoodTable) -> Result<f64> {
    if lik.is_empty() {
        return Err(Error::input("no experiments"));
    }
    let mut c = 0.5;
    for _ in 0..1000 {
        let next = global_posteriors(lik, c).iter().sum::<f64>() / lik.len() as f64;
        let done = (next - c).abs() < 1e-10;
        c = next.clamp(1e-9, 1.0 - 1e-9);
        if done {
            break;
        }
    }
    Ok(c)
}

pub fn global_posteriors(lik: &LikelihoodTable, c: f64) -> Vec<f64> {
    lik.f0
        .iter()
        .zip(&lik.f1)
        .map(|(&f0, &f1)| {
            let alt = c * f1;
            alt / (alt + (1.0 - c) * f0)
        })
        .collect()
}
