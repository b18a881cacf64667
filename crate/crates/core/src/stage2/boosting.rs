//! Gradient-boosted classification trees over binary features.
//!
//! Second-order (Newton) boosting with logistic loss and exact greedy
//! splits. With binary inputs every feature has exactly one candidate
//! split, so a node's split search is a single pass accumulating gradient
//! and hessian sums over the rows where each feature is one.

use serde::{Deserialize, Serialize};

use super::ConditionalModel;
use crate::data::CovariateMatrix;
use crate::error::{Error, Result};
use crate::prior_net::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostingConfig {
    pub rounds: usize,
    pub max_depth: usize,
    pub shrinkage: f64,
    /// L2 penalty on leaf values.
    pub leaf_l2: f64,
    /// Minimum hessian mass in each child of a split.
    pub min_child_weight: f64,
}

impl Default for BoostingConfig {
    fn default() -> Self {
        BoostingConfig {
            rounds: 100,
            max_depth: 3,
            shrinkage: 0.1,
            leaf_l2: 1.0,
            min_child_weight: 1.0,
        }
    }
}

impl BoostingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.max_depth == 0 {
            return Err(Error::config("boosting needs at least one round and depth >= 1"));
        }
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return Err(Error::config("boosting shrinkage must lie in (0, 1]"));
        }
        if !(self.leaf_l2 >= 0.0) || !(self.min_child_weight >= 0.0) {
            return Err(Error::config("boosting penalties must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Split { feature: usize, zero: usize, one: usize },
    Leaf(f64),
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[u8]) -> f64 {
        let mut idx = 0;
        loop {
            match self.nodes[idx] {
                Node::Leaf(v) => return v,
                Node::Split { feature, zero, one } => {
                    idx = if row[feature] == 1 { one } else { zero };
                }
            }
        }
    }
}

/// Boosted model predicting `P(X_j = 1 | X_{-j})`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBoostedTrees {
    base_margin: f64,
    trees: Vec<Tree>,
}

struct Grower<'a> {
    x: &'a CovariateMatrix,
    features: &'a [usize],
    grad: &'a [f64],
    hess: &'a [f64],
    cfg: &'a BoostingConfig,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn leaf_value(&self, g: f64, h: f64) -> f64 {
        -self.cfg.shrinkage * g / (h + self.cfg.leaf_l2)
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let (g, h) = rows
            .iter()
            .fold((0.0, 0.0), |(g, h), &i| (g + self.grad[i], h + self.hess[i]));
        let idx = self.nodes.len();
        self.nodes.push(Node::Leaf(self.leaf_value(g, h)));
        if depth == self.cfg.max_depth || rows.len() < 2 {
            return idx;
        }
        let nf = self.features.len();
        let (mut g1, mut h1) = (vec![0.0; nf], vec![0.0; nf]);
        for &i in &rows {
            let row = self.x.row(i);
            let (gi, hi) = (self.grad[i], self.hess[i]);
            for (k, &f) in self.features.iter().enumerate() {
                let v = f64::from(row[f]);
                g1[k] += gi * v;
                h1[k] += hi * v;
            }
        }
        let lambda = self.cfg.leaf_l2;
        let parent = g * g / (h + lambda);
        let mut best: Option<(f64, usize)> = None;
        for k in 0..nf {
            let (gr, hr) = (g1[k], h1[k]);
            let (gl, hl) = (g - gr, h - hr);
            if hl < self.cfg.min_child_weight || hr < self.cfg.min_child_weight {
                continue;
            }
            let gain = gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent;
            if gain > 1e-12 && best.is_none_or(|(b, _)| gain > b) {
                best = Some((gain, k));
            }
        }
        let Some((_, k)) = best else {
            return idx;
        };
        let feature = self.features[k];
        let (ones, zeros): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&i| self.x.get(i, feature) == 1);
        let zero = self.grow(zeros, depth + 1);
        let one = self.grow(ones, depth + 1);
        self.nodes[idx] = Node::Split { feature, zero, one };
        idx
    }
}

impl GradientBoostedTrees {
    /// Fits column `target` of `x` from the other columns using `rows`.
    pub fn fit(x: &CovariateMatrix, target: usize, rows: &[usize], cfg: &BoostingConfig) -> Result<Self> {
        cfg.validate()?;
        if rows.is_empty() {
            return Err(Error::input("no rows to fit the conditional model"));
        }
        let features: Vec<usize> = (0..x.m()).filter(|&f| f != target).collect();
        let labels: Vec<f64> = (0..x.n()).map(|i| f64::from(x.get(i, target))).collect();
        let mean = rows.iter().map(|&i| labels[i]).sum::<f64>() / rows.len() as f64;
        let mean = mean.clamp(1e-6, 1.0 - 1e-6);
        let base_margin = (mean / (1.0 - mean)).ln();

        let mut margin = vec![base_margin; x.n()];
        let mut grad = vec![0.0; x.n()];
        let mut hess = vec![0.0; x.n()];
        let mut trees = Vec::with_capacity(cfg.rounds);
        for _ in 0..cfg.rounds {
            for &i in rows {
                let p = sigmoid(margin[i]);
                grad[i] = p - labels[i];
                hess[i] = (p * (1.0 - p)).max(1e-16);
            }
            let mut grower = Grower { x, features: &features, grad: &grad, hess: &hess, cfg, nodes: Vec::new() };
            grower.grow(rows.to_vec(), 0);
            let tree = Tree { nodes: grower.nodes };
            for &i in rows {
                margin[i] += tree.predict(x.row(i));
            }
            trees.push(tree);
        }
        Ok(GradientBoostedTrees { base_margin, trees })
    }

    pub fn margin(&self, row: &[u8]) -> f64 {
        self.base_margin + self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }
}

impl ConditionalModel for GradientBoostedTrees {
    fn predict_proba(&self, row: &[u8]) -> f64 {
        sigmoid(self.margin(row))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn learns_a_conjunction() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 2000;
        let mut entries = Vec::with_capacity(n * 3);
        for _ in 0..n {
            let a = rng.random_range(0..2u8);
            let b = rng.random_range(0..2u8);
            entries.extend([a, b, a & b]);
        }
        let x = CovariateMatrix::new(n, 3, entries).unwrap();
        let rows: Vec<usize> = (0..n).collect();
        let model = GradientBoostedTrees::fit(&x, 2, &rows, &BoostingConfig::default()).unwrap();
        assert!(model.predict_proba(&[1, 1, 0]) > 0.95);
        assert!(model.predict_proba(&[0, 1, 1]) < 0.05);
        assert!(model.predict_proba(&[1, 0, 1]) < 0.05);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = BoostingConfig { shrinkage: 0.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
