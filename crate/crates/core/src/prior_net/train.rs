//! Loss, analytic gradients and RMS-prop training with cross-fitting.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::quadrature::BetaQuadrature;
use super::{output_head, sigmoid, PriorNetwork};
use crate::data::{CovariateMatrix, FoldAssignment};
use crate::densities::LikelihoodTable;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Coefficient of the squared-output penalty.
    pub lambda: f64,
    pub dropout_rate: f64,
    pub quadrature_points: usize,
    pub hidden_layers: Vec<usize>,
    pub rms_decay: f64,
    pub rms_epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-4,
            batch_size: 100,
            epochs: 50,
            lambda: 1e-4,
            dropout_rate: 0.2,
            quadrature_points: 100,
            hidden_layers: vec![200, 200],
            rms_decay: 0.9,
            rms_epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::config(msg.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.epochs == 0 || self.quadrature_points == 0 {
            return bad("batch_size, epochs and quadrature_points must be positive");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be nonnegative");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.rms_decay) || !(self.rms_epsilon > 0.0) {
            return bad("rms_decay must lie in [0, 1) and rms_epsilon must be positive");
        }
        if self.hidden_layers.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        Ok(())
    }

    pub fn layer_sizes(&self, inputs: usize) -> Vec<usize> {
        let mut sizes = vec![inputs];
        sizes.extend(&self.hidden_layers);
        sizes.push(2);
        sizes
    }
}

/// Gradients with the same layout as the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub(crate) layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    /// Flattened in the order of [`PriorNetwork::parameters`].
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }
}

/// Batch loss `-sum log p(z_i) + lambda sum (a_i^2 + b_i^2)` and its exact
/// gradient. Dropout masks are drawn once from `rng` and shared by the loss
/// and the gradient.
#[allow(clippy::too_many_arguments)]
pub fn loss_and_gradient<R: Rng + ?Sized>(
    net: &PriorNetwork,
    batch_rows: &[usize],
    x: &CovariateMatrix,
    lik: &LikelihoodTable,
    quad: &BetaQuadrature,
    lambda: f64,
    rng: &mut R,
) -> Result<(f64, Gradients)> {
    if batch_rows.is_empty() {
        return Err(Error::input("empty training batch"));
    }
    if x.m() != net.input_dim() {
        return Err(Error::input(format!(
            "covariates have {} columns, network expects {}",
            x.m(),
            net.input_dim()
        )));
    }
    let cache = net.forward_train(x.rows_f64(batch_rows), rng);
    let mut delta = Array2::zeros((batch_rows.len(), 2));
    let mut loss = 0.0;
    let mut weights = Vec::with_capacity(quad.len());
    for (r, &i) in batch_rows.iter().enumerate() {
        let (ra, rb) = (cache.raw[[r, 0]], cache.raw[[r, 1]]);
        let params = output_head(ra, rb);
        let t = quad.marginal_terms(params, lik.f0[i], lik.f1[i], &mut weights);
        loss += -t.marginal.ln() + lambda * (params.a * params.a + params.b * params.b);
        let dl_da = -t.d_a / t.marginal + 2.0 * lambda * params.a;
        let dl_db = -t.d_b / t.marginal + 2.0 * lambda * params.b;
        delta[[r, 0]] = dl_da * sigmoid(ra);
        delta[[r, 1]] = dl_db * sigmoid(rb);
    }
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("non-finite batch loss {loss}")));
    }

    let mut layers = Vec::with_capacity(net.layers.len());
    for l in (0..net.layers.len()).rev() {
        let grad_w = cache.inputs[l].t().dot(&delta);
        let grad_b = delta.sum_axis(Axis(0));
        if l > 0 {
            let mut back = delta.dot(&net.layers[l].weights.t());
            back *= &cache.masks[l - 1];
            delta = back;
        }
        layers.push((grad_w, grad_b));
    }
    layers.reverse();
    Ok((loss, Gradients { layers }))
}

/// Root-mean-square gradient scaling.
#[derive(Debug, Clone)]
pub struct RmsProp {
    learning_rate: f64,
    decay: f64,
    epsilon: f64,
    mean_square: Vec<(Array2<f64>, Array1<f64>)>,
}

impl RmsProp {
    pub fn new(net: &PriorNetwork, learning_rate: f64, decay: f64, epsilon: f64) -> Self {
        let mean_square = net
            .layers
            .iter()
            .map(|l| (Array2::zeros(l.weights.raw_dim()), Array1::zeros(l.bias.len())))
            .collect();
        RmsProp { learning_rate, decay, epsilon, mean_square }
    }

    pub fn step(&mut self, net: &mut PriorNetwork, grads: &Gradients) {
        let (lr, rho, eps) = (self.learning_rate, self.decay, self.epsilon);
        let update = |p: &mut [f64], v: &mut [f64], g: &[f64]| {
            for ((p, v), &g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = rho * *v + (1.0 - rho) * g * g;
                *p -= lr * g / (v.sqrt() + eps);
            }
        };
        for ((layer, (gw, gb)), (vw, vb)) in
            net.layers.iter_mut().zip(&grads.layers).zip(&mut self.mean_square)
        {
            let contiguous = "parameters and gradients are standard-layout arrays";
            update(
                layer.weights.as_slice_mut().expect(contiguous),
                vw.as_slice_mut().expect(contiguous),
                gw.as_slice().expect(contiguous),
            );
            update(
                layer.bias.as_slice_mut().expect(contiguous),
                vb.as_slice_mut().expect(contiguous),
                gb.as_slice().expect(contiguous),
            );
        }
    }
}

/// A network trained for one cross-fitting fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedNetwork {
    pub fold: usize,
    pub network: PriorNetwork,
    /// Mean per-example training loss for each epoch.
    pub epoch_losses: Vec<f64>,
    pub training_rows: usize,
}

fn fold_rng(seed: u64, fold: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fold as u64);
    rng
}

/// Trains one network per fold, each on the experiments outside that fold.
pub fn train(
    x: &CovariateMatrix,
    lik: &LikelihoodTable,
    folds: &FoldAssignment,
    cfg: &TrainConfig,
) -> Result<Vec<TrainedNetwork>> {
    cfg.validate()?;
    let n = x.n();
    if lik.len() != n || folds.n() != n {
        return Err(Error::input(format!(
            "covariates ({n} rows), likelihoods ({}) and folds ({}) disagree",
            lik.len(),
            folds.n()
        )));
    }
    if n < 2 * folds.k() {
        return Err(Error::config(format!(
            "{n} experiments are too few for {} folds",
            folds.k()
        )));
    }
    let quad = BetaQuadrature::new(cfg.quadrature_points)?;
    (0..folds.k())
        .into_par_iter()
        .map(|f| train_fold(x, lik, &folds.training_rows(f), f, cfg, &quad))
        .collect()
}

fn train_fold(
    x: &CovariateMatrix,
    lik: &LikelihoodTable,
    rows: &[usize],
    fold: usize,
    cfg: &TrainConfig,
    quad: &BetaQuadrature,
) -> Result<TrainedNetwork> {
    let mut rng = fold_rng(cfg.seed, fold);
    let mut net = PriorNetwork::new(&cfg.layer_sizes(x.m()), cfg.dropout_rate, &mut rng)?;
    let mut opt = RmsProp::new(&net, cfg.learning_rate, cfg.rms_decay, cfg.rms_epsilon);
    let mut order = rows.to_vec();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grads) = loss_and_gradient(&net, chunk, x, lik, quad, cfg.lambda, &mut rng)
                .map_err(|e| Error::Training { epoch, batch, detail: e.to_string() })?;
            opt.step(&mut net, &grads);
            total += loss;
        }
        if !net.all_finite() {
            return Err(Error::Training {
                epoch,
                batch: rows.len().div_ceil(cfg.batch_size),
                detail: "parameters became non-finite".into(),
            });
        }
        epoch_losses.push(total / rows.len() as f64);
    }
    Ok(TrainedNetwork { fold, network: net, epoch_losses, training_rows: rows.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::{Alternative, TwoGroupsDensities};
    use crate::ZScores;

    fn toy(n: usize, m: usize, seed: u64) -> (CovariateMatrix, LikelihoodTable) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries: Vec<u8> = loop {
            let e: Vec<u8> = (0..n * m).map(|_| rng.random_range(0..2u8)).collect();
            if crate::data::constant_columns(n, m, &e).is_empty() {
                break e;
            }
        };
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
        let lik = TwoGroupsDensities::new(Alternative::WellSeparated).likelihoods(&ZScores::new(z).unwrap());
        (CovariateMatrix::new(n, m, entries).unwrap(), lik)
    }

    #[test]
    fn zero_network_single_example() {
        let (x, lik) = toy(4, 3, 1);
        let net = PriorNetwork::zeros(&[3, 5, 5, 2], 0.0).unwrap();
        let quad = BetaQuadrature::new(100).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (loss, grads) = loss_and_gradient(&net, &[2], &x, &lik, &quad, 0.0, &mut rng).unwrap();
        let p = output_head(0.0, 0.0);
        let expected = -quad.log_marginal(p, lik.f0[2], lik.f1[2]).unwrap();
        assert!((loss - expected).abs() < 1e-12);
        assert!(grads.flat().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn empty_batch_rejected() {
        let (x, lik) = toy(4, 3, 1);
        let net = PriorNetwork::zeros(&[3, 2], 0.0).unwrap();
        let quad = BetaQuadrature::new(10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(loss_and_gradient(&net, &[], &x, &lik, &quad, 0.0, &mut rng).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (x, lik) = toy(40, 5, 2);
        let quad = BetaQuadrature::new(100).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = PriorNetwork::new(&[5, 8, 8, 2], 0.3, &mut rng).unwrap();
        // nonzero biases keep all-zero rows off the ReLU kink
        let jittered: Vec<f64> = net.parameters().iter().map(|p| p + rng.random_range(-0.5..0.5)).collect();
        net.set_parameters(&jittered).unwrap();
        let batch: Vec<usize> = (0..10).collect();
        let mask_rng = ChaCha8Rng::seed_from_u64(4);
        let (_, grads) =
            loss_and_gradient(&net, &batch, &x, &lik, &quad, 1e-2, &mut mask_rng.clone()).unwrap();
        let analytic = grads.flat();
        let base = net.parameters();
        let h = 1e-5;
        let mut ok = 0;
        for (k, &g) in analytic.iter().enumerate() {
            let eval = |delta: f64| {
                let mut p = base.clone();
                p[k] += delta;
                let mut probe = net.clone();
                probe.set_parameters(&p).unwrap();
                loss_and_gradient(&probe, &batch, &x, &lik, &quad, 1e-2, &mut mask_rng.clone()).unwrap().0
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            if (g - fd).abs() <= 1e-4 * g.abs().max(fd.abs()) || (g.abs() <= 1e-6 && fd.abs() <= 1e-6) {
                ok += 1;
            }
        }
        assert!(ok as f64 >= 0.99 * analytic.len() as f64, "{ok}/{}", analytic.len());
    }

    #[test]
    fn training_is_deterministic_and_cross_fitted() {
        let (x, lik) = toy(120, 4, 5);
        let folds = FoldAssignment::random(120, 3, 1).unwrap();
        let cfg = TrainConfig { epochs: 3, hidden_layers: vec![8], batch_size: 16, ..Default::default() };
        let a = train(&x, &lik, &folds, &cfg).unwrap();
        let b = train(&x, &lik, &folds, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|t| t.training_rows == 80 && t.epoch_losses.len() == 3));
    }

    #[test]
    fn too_few_rows_for_folds() {
        let (x, lik) = toy(5, 2, 5);
        let folds = FoldAssignment::random(5, 3, 1).unwrap();
        assert!(matches!(train(&x, &lik, &folds, &TrainConfig::default()), Err(Error::Config(_))));
    }
}
