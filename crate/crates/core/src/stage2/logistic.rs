//! Ridge-stabilized logistic regression conditional, fit by Newton's method.

use nalgebra::{DMatrix, DVector};

use super::ConditionalModel;
use crate::data::CovariateMatrix;
use crate::error::{Error, Result};
use crate::prior_net::sigmoid;

const RIDGE: f64 = 1e-4;
const MAX_ITER: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticConditional {
    features: Vec<usize>,
    intercept: f64,
    coefficients: Vec<f64>,
}

impl LogisticConditional {
    pub fn fit(x: &CovariateMatrix, target: usize, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::input("no rows to fit the conditional model"));
        }
        let features: Vec<usize> = (0..x.m()).filter(|&f| f != target).collect();
        let d = features.len() + 1;
        let design = |i: usize, k: usize| if k == 0 { 1.0 } else { f64::from(x.get(i, features[k - 1])) };
        let mut beta = DVector::<f64>::zeros(d);
        for _ in 0..MAX_ITER {
            let mut hess = DMatrix::<f64>::identity(d, d) * RIDGE;
            let mut grad = -&beta * RIDGE;
            for &i in rows {
                let eta: f64 = (0..d).map(|k| design(i, k) * beta[k]).sum();
                let p = sigmoid(eta);
                let resid = f64::from(x.get(i, target)) - p;
                let w = p * (1.0 - p);
                for a in 0..d {
                    let xa = design(i, a);
                    if xa == 0.0 {
                        continue;
                    }
                    grad[a] += xa * resid;
                    for b in 0..d {
                        hess[(a, b)] += w * xa * design(i, b);
                    }
                }
            }
            let step = hess
                .cholesky()
                .ok_or_else(|| Error::Numerical("logistic Hessian not positive definite".into()))?
                .solve(&grad);
            beta += &step;
            if step.amax() < 1e-10 {
                break;
            }
        }
        Ok(LogisticConditional {
            features,
            intercept: beta[0],
            coefficients: beta.iter().skip(1).copied().collect(),
        })
    }
}

impl ConditionalModel for LogisticConditional {
    fn predict_proba(&self, row: &[u8]) -> f64 {
        let eta = self.intercept
            + self
                .features
                .iter()
                .zip(&self.coefficients)
                .map(|(&f, c)| c * f64::from(row[f]))
                .sum::<f64>();
        sigmoid(eta)
    }
}
