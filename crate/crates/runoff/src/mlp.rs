//! Feed-forward network log-risk trained by full-batch gradient descent
//! on the partial likelihood with an elastic-net penalty.
//!
//! The objective is the average negative log partial likelihood plus
//! `rho (eps |W|_2^2 + (1 - eps) |W|_1)` over the weight matrices
//! (biases are unpenalized). Full-batch training is required because the
//! likelihood couples all claims through shared risk sets, so per-batch
//! losses are not unbiased. Each epoch backpropagates the per-claim
//! likelihood gradient through the network and applies one fixed-rate
//! step; the returned parameters are those achieving the lowest recorded
//! penalized loss.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::claims::{EncodedDataset, RiskGrid};
use crate::likelihood::{grad_and_hess, LikelihoodError, ScoreVector};
use crate::RiskScorer;

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("config error: {0}")]
    Config(String),
    #[error("training diverged at epoch {0}: non-finite loss")]
    Diverged(usize),
    #[error("scoring error: row has {got} columns, model expects {want}")]
    RowArity { got: usize, want: usize },
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Rectifier,
}

impl Activation {
    fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Rectifier => x.max(0.0),
        }
    }

    fn derivative(&self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Rectifier => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

fn d_hidden_layers() -> usize { 2 }
fn d_hidden_nodes() -> usize { 8 }
fn d_activation() -> Activation { Activation::Tanh }
fn d_learning_rate() -> f64 { 0.05 }
fn d_epochs() -> usize { 300 }
fn d_eps() -> f64 { 0.5 }

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Hidden layer count; 0 gives a plain linear model.
    #[serde(default = "d_hidden_layers")]
    pub hidden_layers: usize,
    /// Width of every hidden layer.
    #[serde(default = "d_hidden_nodes")]
    pub hidden_nodes: usize,
    #[serde(default = "d_activation")]
    pub activation: Activation,
    #[serde(default = "d_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    /// Overall elastic penalty weight.
    #[serde(default)]
    pub rho: f64,
    /// Mix between l2 (`eps`) and l1 (`1 - eps`).
    #[serde(default = "d_eps")]
    pub eps: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden_layers: d_hidden_layers(),
            hidden_nodes: d_hidden_nodes(),
            activation: d_activation(),
            learning_rate: d_learning_rate(),
            epochs: d_epochs(),
            rho: 0.0,
            eps: d_eps(),
            seed: 0,
        }
    }
}

/// One dense layer: `out = W in + b`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Layer {
    /// Row-major `out x in` weights.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpModel {
    pub config: MlpConfig,
    pub layers: Vec<Layer>,
    pub n_features: usize,
    /// Penalized average loss after each epoch.
    pub loss_trace: Vec<f64>,
    /// Lowest penalized average loss over the run (the stored parameters).
    pub best_loss: f64,
    /// Unpenalized average training loss of the stored parameters.
    pub best_data_loss: f64,
}

impl MlpModel {
    fn forward(&self, row: &[f64]) -> f64 {
        let act = self.config.activation;
        let last = self.layers.len() - 1;
        let mut input: Vec<f64> = row.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; layer.bias.len()];
            for (o, (wrow, b)) in layer.weights.iter().zip(&layer.bias).enumerate() {
                let z: f64 = wrow.iter().zip(&input).map(|(w, x)| w * x).sum::<f64>() + b;
                out[o] = if li == last { z } else { act.apply(z) };
            }
            input = out;
        }
        input[0]
    }
}

impl RiskScorer for MlpModel {
    fn log_risk(&self, row: &[f64]) -> f64 {
        self.forward(row)
    }
}

pub fn mlp_log_risk(model: &MlpModel, rows: &[Vec<f64>]) -> Result<ScoreVector, MlpError> {
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        if row.len() != model.n_features {
            return Err(MlpError::RowArity {
                got: row.len(),
                want: model.n_features,
            });
        }
        out.push(model.forward(row));
    }
    Ok(ScoreVector(out))
}

fn layer_sizes(n_features: usize, config: &MlpConfig) -> Vec<(usize, usize)> {
    let mut sizes = Vec::new();
    let mut fan_in = n_features;
    for _ in 0..config.hidden_layers {
        sizes.push((config.hidden_nodes, fan_in));
        fan_in = config.hidden_nodes;
    }
    sizes.push((1, fan_in));
    sizes
}

fn init_layers(n_features: usize, config: &MlpConfig, rng: &mut ChaCha12Rng) -> Vec<Layer> {
    layer_sizes(n_features, config)
        .into_iter()
        .map(|(fan_out, fan_in)| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Layer {
                weights: (0..fan_out)
                    .map(|_| (0..fan_in).map(|_| rng.gen_range(-bound..bound)).collect())
                    .collect(),
                bias: vec![0.0; fan_out],
            }
        })
        .collect()
}

fn penalty_and_grad(layers: &[Layer], rho: f64, eps: f64) -> (f64, Vec<Vec<Vec<f64>>>) {
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(layers.len());
    for layer in layers {
        let mut g = vec![vec![0.0; layer.weights[0].len()]; layer.weights.len()];
        for (o, wrow) in layer.weights.iter().enumerate() {
            for (i, &w) in wrow.iter().enumerate() {
                value += rho * (eps * w * w + (1.0 - eps) * w.abs());
                // l1 subgradient at 0 taken as 0
                g[o][i] = rho * (2.0 * eps * w + (1.0 - eps) * w.signum() * (w != 0.0) as i32 as f64);
            }
        }
        grads.push(g);
    }
    (value, grads)
}

struct ForwardPass {
    /// Pre-activations per layer per unit, for each row.
    pre: Vec<Vec<Vec<f64>>>,
    /// Post-activations per layer (inputs to the next layer), per row.
    post: Vec<Vec<Vec<f64>>>,
    scores: Vec<f64>,
}

fn forward_all(rows: &[Vec<f64>], layers: &[Layer], act: Activation) -> ForwardPass {
    let n = rows.len();
    let l = layers.len();
    let mut pre = vec![Vec::with_capacity(n); l];
    let mut post = vec![Vec::with_capacity(n); l];
    let mut scores = Vec::with_capacity(n);
    for row in rows {
        let mut input = row.clone();
        for (li, layer) in layers.iter().enumerate() {
            let mut z = vec![0.0; layer.bias.len()];
            for (o, (wrow, b)) in layer.weights.iter().zip(&layer.bias).enumerate() {
                z[o] = wrow.iter().zip(&input).map(|(w, x)| w * x).sum::<f64>() + b;
            }
            let a: Vec<f64> = if li == l - 1 {
                z.clone()
            } else {
                z.iter().map(|&v| act.apply(v)).collect()
            };
            pre[li].push(z);
            post[li].push(a.clone());
            input = a;
        }
        scores.push(post[l - 1].last().unwrap()[0]);
    }
    ForwardPass { pre, post, scores }
}

/// Fit the network by full-batch gradient descent.
pub fn fit_mlp(
    data: &EncodedDataset,
    grid: &RiskGrid,
    config: &MlpConfig,
) -> Result<MlpModel, MlpError> {
    if config.epochs == 0 {
        return Err(MlpError::Config("epochs must be >= 1".to_string()));
    }
    if config.hidden_layers > 0 && config.hidden_nodes == 0 {
        return Err(MlpError::Config("zero-width hidden layer".to_string()));
    }
    if !(0.0..=1.0).contains(&config.eps) {
        return Err(MlpError::Config(format!("eps {} outside [0, 1]", config.eps)));
    }
    let n = data.n();
    let n_features = data.encoding.width();
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut layers = init_layers(n_features, config, &mut rng);
    let act = config.activation;
    let lr = config.learning_rate;

    let mut best_layers = layers.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_data_loss = f64::INFINITY;
    let mut loss_trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let pass = forward_all(&data.rows, &layers, act);
        let derivs = grad_and_hess(grid, &ScoreVector(pass.scores.clone()))?;
        let data_loss = derivs.loss / n as f64;
        let (pen, pen_grads) = penalty_and_grad(&layers, config.rho, config.eps);
        let objective = data_loss + pen;
        if !objective.is_finite() {
            return Err(MlpError::Diverged(epoch));
        }
        loss_trace.push(objective);
        if objective < best_loss {
            best_loss = objective;
            best_data_loss = data_loss;
            best_layers = layers.clone();
        }

        // backprop of (1/n) sum_i g_i * dphi_i/dtheta
        let l = layers.len();
        let mut w_grads: Vec<Vec<Vec<f64>>> = layers
            .iter()
            .map(|layer| vec![vec![0.0; layer.weights[0].len()]; layer.weights.len()])
            .collect();
        let mut b_grads: Vec<Vec<f64>> =
            layers.iter().map(|layer| vec![0.0; layer.bias.len()]).collect();

        for i in 0..n {
            // delta at the output: dL/dz_out = g_i / n
            let mut delta = vec![derivs.grad[i] / n as f64];
            for li in (0..l).rev() {
                let inputs: &[f64] = if li == 0 {
                    &data.rows[i]
                } else {
                    &pass.post[li - 1][i]
                };
                for (o, d) in delta.iter().enumerate() {
                    b_grads[li][o] += d;
                    for (ii, x) in inputs.iter().enumerate() {
                        w_grads[li][o][ii] += d * x;
                    }
                }
                if li > 0 {
                    let mut prev = vec![0.0; inputs.len()];
                    for (o, d) in delta.iter().enumerate() {
                        for (ii, w) in layers[li].weights[o].iter().enumerate() {
                            prev[ii] += d * w;
                        }
                    }
                    for (ii, p) in prev.iter_mut().enumerate() {
                        *p *= act.derivative(pass.pre[li - 1][i][ii]);
                    }
                    delta = prev;
                }
            }
        }

        for li in 0..l {
            for o in 0..layers[li].bias.len() {
                layers[li].bias[o] -= lr * b_grads[li][o];
                for ii in 0..layers[li].weights[o].len() {
                    layers[li].weights[o][ii] -=
                        lr * (w_grads[li][o][ii] + pen_grads[li][o][ii]);
                }
            }
        }
    }

    // final state may beat the last recorded epoch
    let pass = forward_all(&data.rows, &layers, act);
    if let Ok(derivs) = grad_and_hess(grid, &ScoreVector(pass.scores)) {
        let data_loss = derivs.loss / n as f64;
        let (pen, _) = penalty_and_grad(&layers, config.rho, config.eps);
        if data_loss + pen < best_loss {
            best_loss = data_loss + pen;
            best_data_loss = data_loss;
            best_layers = layers;
        }
    }

    Ok(MlpModel {
        config: config.clone(),
        layers: best_layers,
        n_features,
        loss_trace,
        best_loss,
        best_data_loss,
    })
}
