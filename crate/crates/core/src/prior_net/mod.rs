//! The black-box prior: a ReLU network mapping a covariate row to the two
//! parameters of a beta prior over that experiment's mixing weight.
//!
//! Each output passes through softplus and then has one added, so both
//! parameters always exceed one and the prior density is concave.

mod quadrature;
mod train;

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use quadrature::{log_marginal, BetaQuadrature};
pub use train::{loss_and_gradient, train, Gradients, RmsProp, TrainConfig, TrainedNetwork};

/// Parameters of a beta distribution with both shape parameters above one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub a: f64,
    pub b: f64,
}

impl BetaParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if a > 1.0 && b > 1.0 && a.is_finite() && b.is_finite() {
            Ok(BetaParams { a, b })
        } else {
            Err(Error::input(format!("beta parameters must be finite and > 1, got ({a}, {b})")))
        }
    }

    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maps raw network outputs to beta parameters: `softplus(raw) + 1`.
pub fn output_head(raw_a: f64, raw_b: f64) -> BetaParams {
    BetaParams {
        a: softplus(raw_a) + 1.0,
        b: softplus(raw_b) + 1.0,
    }
}

/// Whether dropout is active during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Dense {
    /// Shape (inputs, outputs).
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Feed-forward prior network. Hidden layers use ReLU (and dropout while
/// training); the final layer has exactly two outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorNetwork {
    pub(crate) layers: Vec<Dense>,
    dropout_rate: f64,
}

/// Activations retained from a training-mode forward pass.
pub(crate) struct ForwardCache {
    /// Input to each layer (after ReLU and dropout for hidden layers).
    pub inputs: Vec<Array2<f64>>,
    /// Per hidden layer: derivative mask combining ReLU and dropout scaling.
    pub masks: Vec<Array2<f64>>,
    /// Raw two-column output before the softplus head.
    pub raw: Array2<f64>,
}

impl PriorNetwork {
    /// Network with He-uniform weights and zero biases.
    pub fn new<R: Rng + ?Sized>(layer_sizes: &[usize], dropout_rate: f64, rng: &mut R) -> Result<Self> {
        Self::validate_shape(layer_sizes, dropout_rate)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let limit = (6.0 / w[0] as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
                Dense {
                    weights: Array2::from_shape_fn((w[0], w[1]), |_| dist.sample(rng)),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Ok(PriorNetwork { layers, dropout_rate })
    }

    /// Network with every parameter set to zero.
    pub fn zeros(layer_sizes: &[usize], dropout_rate: f64) -> Result<Self> {
        Self::validate_shape(layer_sizes, dropout_rate)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| Dense {
                weights: Array2::zeros((w[0], w[1])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Ok(PriorNetwork { layers, dropout_rate })
    }

    fn validate_shape(layer_sizes: &[usize], dropout_rate: f64) -> Result<()> {
        if layer_sizes.len() < 2 {
            return Err(Error::config("network needs an input and an output layer"));
        }
        if layer_sizes.last() != Some(&2) {
            return Err(Error::config("network output dimension must be 2"));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::config("layer widths must be positive"));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::config(format!("dropout rate {dropout_rate} outside [0, 1)")));
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(|l| l.bias.len()));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters flattened layer by layer: weights (row-major), then bias.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_parameters(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_parameters() {
            return Err(Error::input(format!(
                "expected {} parameters, got {}",
                self.num_parameters(),
                flat.len()
            )));
        }
        let mut it = flat.iter();
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|p| *p = *it.next().unwrap());
        }
        Ok(())
    }

    /// Mutable access to one input column's outgoing weights in the first layer.
    pub fn input_weights_mut(&mut self, feature: usize) -> ndarray::ArrayViewMut1<'_, f64> {
        self.layers[0].weights.row_mut(feature)
    }

    pub fn forward<R: Rng + ?Sized>(&self, x_row: &[u8], mode: Mode, rng: &mut R) -> Result<BetaParams> {
        if x_row.len() != self.input_dim() {
            return Err(Error::input(format!(
                "covariate row has length {}, network expects {}",
                x_row.len(),
                self.input_dim()
            )));
        }
        let x = Array2::from_shape_fn((1, x_row.len()), |(_, j)| f64::from(x_row[j]));
        let raw = match mode {
            Mode::Eval => self.raw_outputs(x.view()),
            Mode::Train => self.forward_train(x, rng).raw,
        };
        Ok(output_head(raw[[0, 0]], raw[[0, 1]]))
    }

    /// Evaluation-mode raw outputs for a batch of rows.
    pub fn raw_outputs(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut act = x.to_owned();
        for (idx, layer) in self.layers.iter().enumerate() {
            let mut z = act.dot(&layer.weights);
            z += &layer.bias;
            if idx < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            act = z;
        }
        act
    }

    /// Evaluation-mode beta parameters for a batch of rows.
    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Vec<BetaParams> {
        self.raw_outputs(x)
            .axis_iter(Axis(0))
            .map(|r| output_head(r[0], r[1]))
            .collect()
    }

    pub(crate) fn forward_train<R: Rng + ?Sized>(&self, x: Array2<f64>, rng: &mut R) -> ForwardCache {
        let last = self.layers.len() - 1;
        let keep = 1.0 - self.dropout_rate;
        let scale = 1.0 / keep;
        // a unit is kept when a uniform u32 falls below keep * 2^32
        let threshold = (keep * 4_294_967_296.0).min(u32::MAX as f64) as u32;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(last);
        let mut act = x;
        for (idx, layer) in self.layers.iter().enumerate() {
            let mut z = act.dot(&layer.weights);
            z += &layer.bias;
            inputs.push(act);
            if idx == last {
                return ForwardCache { inputs, masks, raw: z };
            }
            let mut mask = Array2::zeros(z.raw_dim());
            for (m, v) in mask.iter_mut().zip(z.iter_mut()) {
                if *v > 0.0 && (self.dropout_rate == 0.0 || rng.next_u32() < threshold) {
                    *m = scale;
                    *v *= scale;
                } else {
                    *v = 0.0;
                }
            }
            masks.push(mask);
            act = z;
        }
        unreachable!("network has at least one layer")
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn save_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer(out, &NetworkFile::from(self))?;
        Ok(())
    }

    pub fn load_json<R: Read>(input: R) -> Result<Self> {
        let file: NetworkFile = serde_json::from_reader(input)?;
        file.try_into()
    }
}

/// On-disk representation: layer sizes plus row-major weight arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkFile {
    pub format_version: u32,
    pub layer_sizes: Vec<usize>,
    pub dropout_rate: f64,
    /// Per layer, `inputs x outputs` weights in row-major order.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl From<&PriorNetwork> for NetworkFile {
    fn from(net: &PriorNetwork) -> Self {
        NetworkFile {
            format_version: crate::SCHEMA_VERSION,
            layer_sizes: net.layer_sizes(),
            dropout_rate: net.dropout_rate,
            weights: net.layers.iter().map(|l| l.weights.iter().copied().collect()).collect(),
            biases: net.layers.iter().map(|l| l.bias.to_vec()).collect(),
        }
    }
}

impl TryFrom<NetworkFile> for PriorNetwork {
    type Error = Error;

    fn try_from(file: NetworkFile) -> Result<Self> {
        if file.format_version != crate::SCHEMA_VERSION {
            return Err(Error::input(format!(
                "unsupported network file version {}",
                file.format_version
            )));
        }
        PriorNetwork::validate_shape(&file.layer_sizes, file.dropout_rate)?;
        let n_layers = file.layer_sizes.len() - 1;
        if file.weights.len() != n_layers || file.biases.len() != n_layers {
            return Err(Error::input("network file layer count does not match layer sizes"));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for (idx, (w, b)) in file.weights.into_iter().zip(file.biases).enumerate() {
            let (rows, cols) = (file.layer_sizes[idx], file.layer_sizes[idx + 1]);
            let weights = Array2::from_shape_vec((rows, cols), w).map_err(|_| {
                Error::input(format!("layer {idx} weights do not have shape {rows} x {cols}"))
            })?;
            if b.len() != cols {
                return Err(Error::input(format!("layer {idx} bias has length {}, expected {cols}", b.len())));
            }
            layers.push(Dense { weights, bias: Array1::from(b) });
        }
        let net = PriorNetwork { layers, dropout_rate: file.dropout_rate };
        if !net.all_finite() {
            return Err(Error::input("network file contains non-finite parameters"));
        }
        Ok(net)
    }
}

impl Serialize for PriorNetwork {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        NetworkFile::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for PriorNetwork {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        NetworkFile::deserialize(d)?.try_into().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_ln2_plus_one() {
        let net = PriorNetwork::zeros(&[4, 8, 2], 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = net.forward(&[1, 0, 1, 1], Mode::Train, &mut rng).unwrap();
        assert!((p.a - 1.6931472).abs() < 1e-7 && (p.b - 1.6931472).abs() < 1e-7);
    }

    #[test]
    fn head_closed_form() {
        let p = output_head(0.0, 10.0);
        assert!((p.a - 1.6931472).abs() < 1e-7);
        assert!((p.b - 11.0000454).abs() < 1e-7);
        let extreme = output_head(-800.0, 800.0);
        assert!(extreme.a >= 1.0 && extreme.b == 801.0);
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = PriorNetwork::new(&[3, 16, 16, 2], 0.5, &mut rng).unwrap();
        let a = net.forward(&[1, 1, 0], Mode::Eval, &mut rng).unwrap();
        let b = net.forward(&[1, 1, 0], Mode::Eval, &mut rng).unwrap();
        assert_eq!(a, b);
        assert!(net.forward(&[1, 1], Mode::Eval, &mut rng).is_err());
    }

    #[test]
    fn shape_validation() {
        assert!(PriorNetwork::zeros(&[3, 4, 3], 0.0).is_err());
        assert!(PriorNetwork::zeros(&[3, 2], 1.0).is_err());
        assert!(PriorNetwork::zeros(&[2], 0.0).is_err());
    }

    #[test]
    fn json_round_trip_and_shape_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = PriorNetwork::new(&[5, 7, 2], 0.1, &mut rng).unwrap();
        let mut buf = Vec::new();
        net.save_json(&mut buf).unwrap();
        assert_eq!(PriorNetwork::load_json(buf.as_slice()).unwrap(), net);

        let mut file = NetworkFile::from(&net);
        file.weights[0].pop();
        let text = serde_json::to_vec(&file).unwrap();
        assert!(PriorNetwork::load_json(text.as_slice()).is_err());
    }
}
