//! Integration of two-groups likelihood terms against a beta prior on the
//! mixing weight.
//!
//! Nodes are Gauss-Legendre points mapped to (0, 1). Weights are the
//! beta kernel `c^(a-1) (1-c)^(b-1)` times the Legendre weight, normalized to
//! sum to one, so the normalizing constant B(a, b) never has to be evaluated
//! and a constant integrand is reproduced exactly.

use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;

use super::BetaParams;
use crate::error::{Error, Result};

/// Fixed quadrature nodes on (0, 1) reused across evaluations.
#[derive(Debug, Clone)]
pub struct BetaQuadrature {
    nodes: Vec<f64>,
    ln_node: Vec<f64>,
    ln_one_minus: Vec<f64>,
    ln_rule_weight: Vec<f64>,
}

/// Marginal likelihood and its derivatives with respect to (a, b).
#[derive(Debug, Clone, Copy)]
pub(crate) struct MarginalTerms {
    pub marginal: f64,
    pub d_a: f64,
    pub d_b: f64,
}

impl BetaQuadrature {
    pub fn new(points: usize) -> Result<Self> {
        let degree = NonZeroUsize::new(points)
            .ok_or_else(|| Error::config("quadrature needs at least one point"))?;
        let rule = GaussLegendre::new(degree);
        let mut pairs: Vec<(f64, f64)> = rule
            .iter()
            .map(|(x, w)| (0.5 * (x + 1.0), 0.5 * w))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(BetaQuadrature {
            ln_node: pairs.iter().map(|p| p.0.ln()).collect(),
            ln_one_minus: pairs.iter().map(|p| (-p.0).ln_1p()).collect(),
            ln_rule_weight: pairs.iter().map(|p| p.1.ln()).collect(),
            nodes: pairs.into_iter().map(|p| p.0).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Normalized prior weights at each node for Beta(a, b).
    pub fn weights_into(&self, params: BetaParams, out: &mut Vec<f64>) {
        let (am1, bm1) = (params.a - 1.0, params.b - 1.0);
        out.clear();
        out.extend(
            self.ln_node
                .iter()
                .zip(&self.ln_one_minus)
                .zip(&self.ln_rule_weight)
                .map(|((lc, l1c), lw)| am1 * lc + bm1 * l1c + lw),
        );
        let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for w in out.iter_mut() {
            *w = (*w - max).exp();
            total += *w;
        }
        out.iter_mut().for_each(|w| *w /= total);
    }

    /// Prior mean of the mixing weight under the quadrature.
    pub fn prior_mean(&self, params: BetaParams) -> f64 {
        let mut w = Vec::with_capacity(self.len());
        self.weights_into(params, &mut w);
        w.iter().zip(&self.nodes).map(|(w, c)| w * c).sum()
    }

    /// `log \int (c f1 + (1 - c) f0) Beta(c; a, b) dc`.
    pub fn log_marginal(&self, params: BetaParams, f0: f64, f1: f64) -> Result<f64> {
        check_likelihoods(f0, f1)?;
        Ok(self.prior_mean(params).mul_add(f1 - f0, f0).ln())
    }

    /// Posterior probability of the alternative,
    /// `\int c f1 / (c f1 + (1 - c) f0) Beta(c; a, b) dc`.
    pub fn posterior(&self, params: BetaParams, f0: f64, f1: f64) -> Result<f64> {
        check_likelihoods(f0, f1)?;
        let mut w = Vec::with_capacity(self.len());
        self.weights_into(params, &mut w);
        Ok(self.posterior_with_weights(&w, f0, f1))
    }

    pub(crate) fn posterior_with_weights(&self, weights: &[f64], f0: f64, f1: f64) -> f64 {
        if f1 == 0.0 {
            return 0.0;
        }
        if f0 == 0.0 {
            return 1.0;
        }
        let post: f64 = weights
            .iter()
            .zip(&self.nodes)
            .map(|(w, &c)| w * c * f1 / (c * f1 + (1.0 - c) * f0))
            .sum();
        post.clamp(0.0, 1.0)
    }

    /// Marginal likelihood with its (a, b) gradient; `weights` is scratch space.
    ///
    /// With normalized weights `w_k`, `d w_k / d a = w_k (ln c_k - E_w[ln c])`,
    /// so `dp/da = sum_k w_k (L_k - p) ln c_k` and likewise for b.
    pub(crate) fn marginal_terms(
        &self,
        params: BetaParams,
        f0: f64,
        f1: f64,
        weights: &mut Vec<f64>,
    ) -> MarginalTerms {
        self.weights_into(params, weights);
        let diff = f1 - f0;
        let mean: f64 = weights.iter().zip(&self.nodes).map(|(w, c)| w * c).sum();
        let marginal = mean.mul_add(diff, f0);
        let (mut d_a, mut d_b) = (0.0, 0.0);
        for (((w, &c), lc), l1c) in weights
            .iter()
            .zip(&self.nodes)
            .zip(&self.ln_node)
            .zip(&self.ln_one_minus)
        {
            let centered = w * (c - mean) * diff;
            d_a += centered * lc;
            d_b += centered * l1c;
        }
        MarginalTerms { marginal, d_a, d_b }
    }
}

fn check_likelihoods(f0: f64, f1: f64) -> Result<()> {
    if !(f0 >= 0.0 && f1 >= 0.0 && f0.is_finite() && f1.is_finite()) {
        return Err(Error::input(format!("densities must be finite and nonnegative (f0={f0}, f1={f1})")));
    }
    if f0 == 0.0 && f1 == 0.0 {
        return Err(Error::Numerical("null and alternative densities are both zero".into()));
    }
    Ok(())
}

/// One-off evaluation of the log marginal likelihood with `points` nodes.
pub fn log_marginal(params: BetaParams, f0: f64, f1: f64, points: usize) -> Result<f64> {
    BetaQuadrature::new(points)?.log_marginal(params, f0, f1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::gamma::ln_gamma;

    /// Independent route: raw midpoint rule with the exact beta density.
    fn midpoint_oracle(a: f64, b: f64, f0: f64, f1: f64, k: usize) -> (f64, f64) {
        let ln_beta = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
        let (mut marg, mut post) = (0.0, 0.0);
        for i in 0..k {
            let c = (i as f64 + 0.5) / k as f64;
            let dens = ((a - 1.0) * c.ln() + (b - 1.0) * (1.0 - c).ln() - ln_beta).exp() / k as f64;
            marg += dens * (c * f1 + (1.0 - c) * f0);
            post += dens * c * f1 / (c * f1 + (1.0 - c) * f0);
        }
        (marg.ln(), post)
    }

    fn params(a: f64, b: f64) -> BetaParams {
        BetaParams::new(a, b).unwrap()
    }

    #[test]
    fn uniform_prior_averages_the_densities() {
        let eps = 1e-9;
        let lm = log_marginal(params(1.0 + eps, 1.0 + eps), 0.4, 0.2, 100).unwrap();
        assert!((lm - (-1.2039728)).abs() < 1e-5, "{lm}");
    }

    #[test]
    fn equal_densities_collapse_exactly() {
        let q = BetaQuadrature::new(100).unwrap();
        for (a, b) in [(1.5, 30.0), (7.0, 2.0), (49.0, 49.0)] {
            let lm = q.log_marginal(params(a, b), 0.37, 0.37).unwrap();
            assert!((lm - 0.37f64.ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn beta_3_2_matches_closed_form_and_oracle() {
        let q = BetaQuadrature::new(100).unwrap();
        let lm = q.log_marginal(params(3.0, 2.0), 0.1, 0.5).unwrap();
        assert!((lm - (-1.0788097)).abs() < 1e-4, "{lm}");
        let (oracle_lm, oracle_post) = midpoint_oracle(3.0, 2.0, 0.1, 0.5, 100_000);
        assert!((lm - oracle_lm).abs() < 1e-6);
        // frozen from the oracle above (and adaptive quadrature): 0.8566100
        let post = q.posterior(params(3.0, 2.0), 0.1, 0.5).unwrap();
        assert!((post - 0.8566100).abs() < 1e-4, "{post}");
        assert!((post - oracle_post).abs() < 1e-6);
    }

    #[test]
    fn degenerate_and_invalid_likelihoods() {
        let q = BetaQuadrature::new(100).unwrap();
        assert!(matches!(q.log_marginal(params(2.0, 2.0), 0.0, 0.0), Err(Error::Numerical(_))));
        assert!(q.log_marginal(params(2.0, 2.0), -1.0, 0.5).is_err());
        assert!(BetaQuadrature::new(0).is_err());
    }

    #[test]
    fn converges_between_100_and_10000_points() {
        let coarse = BetaQuadrature::new(100).unwrap();
        let fine = BetaQuadrature::new(10_000).unwrap();
        for &a in &[1.0 + 1e-6, 1.5, 4.0, 15.0, 50.0] {
            for &b in &[1.0 + 1e-6, 2.0, 9.0, 50.0] {
                for &(f0, f1) in &[(1e-6, 1.0), (1.0, 1e-6), (0.3, 0.02), (1e-6, 1e-6)] {
                    let p = params(a, b);
                    let d = (coarse.log_marginal(p, f0, f1).unwrap()
                        - fine.log_marginal(p, f0, f1).unwrap())
                    .abs();
                    assert!(d < 1e-3, "a={a} b={b} f0={f0} f1={f1}: {d}");
                }
            }
        }
    }

    #[test]
    fn marginal_gradient_matches_finite_difference() {
        let q = BetaQuadrature::new(100).unwrap();
        let mut w = Vec::new();
        for &(a, b, f0, f1) in &[(2.0, 3.0, 0.1, 0.4), (1.2, 20.0, 0.3, 0.01), (30.0, 1.7, 0.05, 0.2)] {
            let t = q.marginal_terms(params(a, b), f0, f1, &mut w);
            let h = 1e-6;
            let m = |a, b| q.log_marginal(params(a, b), f0, f1).unwrap().exp();
            let fd_a = (m(a + h, b) - m(a - h, b)) / (2.0 * h);
            let fd_b = (m(a, b + h) - m(a, b - h)) / (2.0 * h);
            assert!((t.d_a - fd_a).abs() <= 1e-6 * (1.0 + fd_a.abs()), "{} {}", t.d_a, fd_a);
            assert!((t.d_b - fd_b).abs() <= 1e-6 * (1.0 + fd_b.abs()), "{} {}", t.d_b, fd_b);
        }
    }
}
