//! Synthetic scenarios with known priors and ground-truth outcomes.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{constant_columns, CovariateMatrix, ZScores};
use crate::error::{Error, Result};
use crate::prior_net::sigmoid;

/// Number of latent Bernoulli variables behind the nonlinear covariates.
pub const LATENT_COUNT: usize = 20;
/// Latent (or covariate) pairs combined per logit in the nonlinear scenario.
pub const PAIRS_PER_LOGIT: usize = 5;
const MAX_ATTEMPTS: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Constant,
    Linear,
    Nonlinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlternativeKind {
    Ws,
    Ps,
}

impl AlternativeKind {
    /// Draws one z-score from this alternative.
    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        let e: f64 = StandardNormal.sample(rng);
        match self {
            AlternativeKind::Ws => {
                let u: f64 = rng.random();
                if u < 0.48 {
                    e - 2.0
                } else if u < 0.52 {
                    4.0 * e
                } else {
                    e + 2.0
                }
            }
            AlternativeKind::Ps => 3.0 * e,
        }
    }

    pub fn densities(self) -> crate::densities::Alternative {
        match self {
            AlternativeKind::Ws => crate::densities::Alternative::WellSeparated,
            AlternativeKind::Ps => crate::densities::Alternative::PoorlySeparated,
        }
    }
}

/// A generated dataset together with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub x: CovariateMatrix,
    pub z: ZScores,
    pub h_true: Vec<bool>,
    pub c_true: Vec<f64>,
    /// Covariates the true prior depends on.
    pub signal_features: Vec<bool>,
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn attempt_rng(seed: u64, attempt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(attempt);
    rng
}

/// Runs `build` with fresh attempt streams until no covariate is constant.
fn retry_nonconstant<F>(n: usize, m: usize, seed: u64, mut build: F) -> Result<(Vec<u8>, Vec<f64>, Vec<bool>)>
where
    F: FnMut(&mut ChaCha8Rng) -> (Vec<u8>, Vec<f64>, Vec<bool>),
{
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = attempt_rng(seed, attempt);
        let out = build(&mut rng);
        if constant_columns(n, m, &out.0).is_empty() {
            return Ok(out);
        }
    }
    Err(Error::config(format!(
        "could not draw {n} rows without a constant covariate after {MAX_ATTEMPTS} attempts"
    )))
}

fn finish<R: Rng + ?Sized>(
    n: usize,
    m: usize,
    entries: Vec<u8>,
    c_true: Vec<f64>,
    signal_features: Vec<bool>,
    alternative: AlternativeKind,
    rng: &mut R,
) -> Result<SyntheticDataset> {
    let h_true: Vec<bool> = c_true.iter().map(|&c| rng.random::<f64>() < c).collect();
    let z = h_true
        .iter()
        .map(|&h| if h { alternative.sample(rng) } else { standard_normal(rng) })
        .collect();
    Ok(SyntheticDataset {
        x: CovariateMatrix::new(n, m, entries)?,
        z: ZScores::new(z)?,
        h_true,
        c_true,
        signal_features,
    })
}

fn check_shape(n: usize, m: usize, signal_count: usize) -> Result<()> {
    if n == 0 || m == 0 {
        return Err(Error::config("synthetic datasets need n, m >= 1"));
    }
    if signal_count > m {
        return Err(Error::config(format!("signal_count {signal_count} exceeds m = {m}")));
    }
    Ok(())
}

fn centered(mut logits: Vec<f64>) -> Vec<f64> {
    let mean = logits.iter().sum::<f64>() / logits.len() as f64;
    logits.iter_mut().for_each(|v| *v -= mean);
    logits
}

/// Prior independent of the covariates: `c = 0.5` for every experiment.
pub fn generate_constant(n: usize, m: usize, alternative: AlternativeKind, seed: u64) -> Result<SyntheticDataset> {
    check_shape(n, m, 0)?;
    let (entries, c, signal) = retry_nonconstant(n, m, seed, |rng| {
        let entries = (0..n * m).map(|_| u8::from(standard_normal(rng) > 0.0)).collect();
        (entries, vec![0.5; n], vec![false; m])
    })?;
    let mut rng = attempt_rng(seed, MAX_ATTEMPTS);
    finish(n, m, entries, c, signal, alternative, &mut rng)
}

/// Correlated Gaussian covariates binarized by sign, with a logistic prior
/// that is linear in the covariates.
pub fn generate_linear(
    n: usize,
    m: usize,
    signal_count: usize,
    alternative: AlternativeKind,
    seed: u64,
) -> Result<SyntheticDataset> {
    check_shape(n, m, signal_count)?;
    let mut rng = attempt_rng(seed, MAX_ATTEMPTS);
    let a = DMatrix::<f64>::from_fn(m, m, |_, _| standard_normal(&mut rng));
    let sigma = &a * a.transpose() / m as f64 + DMatrix::<f64>::identity(m, m) * 1e-3;
    let chol = sigma
        .cholesky()
        .ok_or_else(|| Error::Numerical("covariate covariance is not positive definite".into()))?;
    let l = chol.l();
    let mut signal = vec![false; m];
    for j in sample(&mut rng, m, signal_count) {
        signal[j] = true;
    }
    let beta: Vec<f64> = signal
        .iter()
        .map(|&s| if s { standard_normal(&mut rng) } else { 0.0 })
        .collect();

    let (entries, c, signal) = retry_nonconstant(n, m, seed, |rng| {
        let mut entries = Vec::with_capacity(n * m);
        let mut logits = Vec::with_capacity(n);
        let mut g = nalgebra::DVector::<f64>::zeros(m);
        for _ in 0..n {
            g.iter_mut().for_each(|v| *v = standard_normal(rng));
            let latent = &l * &g;
            let row: Vec<u8> = latent.iter().map(|&v| u8::from(v > 0.0)).collect();
            logits.push(row.iter().zip(&beta).map(|(&x, b)| f64::from(x) * b).sum::<f64>());
            entries.extend(row);
        }
        let c = centered(logits).into_iter().map(sigmoid).collect();
        (entries, c, signal.clone())
    })?;
    finish(n, m, entries, c, signal, alternative, &mut rng)
}

/// A sum of weighted AND/XOR terms over distinct index pairs.
#[derive(Debug, Clone, PartialEq)]
struct PairLogit {
    terms: Vec<(usize, usize, bool, f64)>,
}

impl PairLogit {
    /// Draws `PAIRS_PER_LOGIT` distinct pairs from `pool`.
    fn draw<R: Rng + ?Sized>(pool: &[usize], rng: &mut R) -> Self {
        let mut terms: Vec<(usize, usize, bool, f64)> = Vec::with_capacity(PAIRS_PER_LOGIT);
        let max_pairs = pool.len() * (pool.len().saturating_sub(1)) / 2;
        while terms.len() < PAIRS_PER_LOGIT.min(max_pairs) {
            let picked = sample(rng, pool.len(), 2);
            let (u, v) = (pool[picked.index(0)].min(pool[picked.index(1)]), pool[picked.index(0)].max(pool[picked.index(1)]));
            if terms.iter().any(|&(a, b, _, _)| (a, b) == (u, v)) {
                continue;
            }
            let and = rng.random::<bool>();
            terms.push((u, v, and, standard_normal(rng)));
        }
        PairLogit { terms }
    }

    fn eval(&self, values: &[u8]) -> f64 {
        self.terms
            .iter()
            .map(|&(u, v, and, w)| {
                let bit = if and { values[u] & values[v] } else { values[u] ^ values[v] };
                w * f64::from(bit)
            })
            .sum()
    }

    fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.terms.iter().flat_map(|&(u, v, _, _)| [u, v])
    }
}

/// Covariates driven by pairwise interactions of latent bits, with a prior
/// built from pairwise interactions of the signal covariates.
pub fn generate_nonlinear(
    n: usize,
    m: usize,
    signal_count: usize,
    alternative: AlternativeKind,
    seed: u64,
) -> Result<SyntheticDataset> {
    check_shape(n, m, signal_count)?;
    let mut rng = attempt_rng(seed, MAX_ATTEMPTS);
    let latents: Vec<usize> = (0..LATENT_COUNT).collect();
    let covariate_logits: Vec<PairLogit> = (0..m).map(|_| PairLogit::draw(&latents, &mut rng)).collect();
    let mut pool: Vec<usize> = sample(&mut rng, m, signal_count).into_vec();
    pool.sort_unstable();
    let prior_logit = PairLogit::draw(&pool, &mut rng);
    let mut signal = vec![false; m];
    for j in prior_logit.indices() {
        signal[j] = true;
    }

    let (entries, c, signal) = retry_nonconstant(n, m, seed, |rng| {
        let mut entries = Vec::with_capacity(n * m);
        let mut logits = Vec::with_capacity(n);
        let mut u = vec![0u8; LATENT_COUNT];
        for _ in 0..n {
            u.iter_mut().for_each(|b| *b = rng.random_range(0..2u8));
            let row: Vec<u8> = covariate_logits
                .iter()
                .map(|g| u8::from(rng.random::<f64>() < sigmoid(g.eval(&u))))
                .collect();
            logits.push(prior_logit.eval(&row));
            entries.extend(row);
        }
        let c = centered(logits).into_iter().map(sigmoid).collect();
        (entries, c, signal.clone())
    })?;
    finish(n, m, entries, c, signal, alternative, &mut rng)
}

/// Dispatches on the prior kind.
pub fn generate(
    kind: PriorKind,
    n: usize,
    m: usize,
    signal_count: usize,
    alternative: AlternativeKind,
    seed: u64,
) -> Result<SyntheticDataset> {
    match kind {
        PriorKind::Constant => generate_constant(n, m, alternative, seed),
        PriorKind::Linear => generate_linear(n, m, signal_count, alternative, seed),
        PriorKind::Nonlinear => generate_nonlinear(n, m, signal_count, alternative, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn correlation(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        cov / (vx * vy).sqrt()
    }

    #[test]
    fn constant_scenario_is_balanced_and_uninformative() {
        let d = generate_constant(10_000, 50, AlternativeKind::Ws, 3).unwrap();
        let h: Vec<f64> = d.h_true.iter().map(|&h| f64::from(u8::from(h))).collect();
        assert!((h.iter().sum::<f64>() / 10_000.0 - 0.5).abs() < 0.02);
        assert!(d.signal_features.iter().all(|&s| !s));
        assert!(d.c_true.iter().all(|&c| c == 0.5));
        for j in 0..50 {
            let col: Vec<f64> = d.x.column(j).into_iter().map(f64::from).collect();
            assert!(correlation(&col, &h).abs() < 0.05);
        }
    }

    #[test]
    fn linear_prior_is_centered_and_ignores_null_columns() {
        let d = generate_linear(50_000, 50, 25, AlternativeKind::Ws, 8).unwrap();
        let mean_c = d.c_true.iter().sum::<f64>() / d.c_true.len() as f64;
        assert!((mean_c - 0.5).abs() < 0.05, "{mean_c}");
        assert_eq!(d.signal_features.iter().filter(|&&s| s).count(), 25);
    }

    #[test]
    fn nonlinear_prior_uses_only_signal_covariates() {
        let d = generate_nonlinear(2000, 50, 25, AlternativeKind::Ps, 11).unwrap();
        let used = d.signal_features.iter().filter(|&&s| s).count();
        assert!(used >= 2 && used <= 2 * PAIRS_PER_LOGIT);
        assert!(d.c_true.iter().all(|&c| c > 0.0 && c < 1.0));
    }

    #[test]
    fn generation_is_reproducible() {
        for kind in [PriorKind::Constant, PriorKind::Linear, PriorKind::Nonlinear] {
            let a = generate(kind, 300, 10, 5, AlternativeKind::Ws, 42).unwrap();
            let b = generate(kind, 300, 10, 5, AlternativeKind::Ws, 42).unwrap();
            assert_eq!(a, b);
            let c = generate(kind, 300, 10, 5, AlternativeKind::Ws, 43).unwrap();
            assert_ne!(a.z, c.z);
        }
    }

    #[test]
    fn too_many_signals_is_rejected() {
        assert!(generate_linear(10, 3, 4, AlternativeKind::Ws, 0).is_err());
    }
}
