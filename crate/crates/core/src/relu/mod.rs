//! Feedforward ReLU networks: evaluation, serialization, Lipschitz bounds,
//! pre-activation interval bounds, and stable-neuron analysis.
//!
//! A network with `L + 1` layers maps `x` through `z_0 = x`,
//! `z_{l+1} = max(W_l z_l + b_l, 0)` for the first `L` layers, and finishes
//! with the affine output `W_L z_L + b_L` (no activation on the last layer).

mod bounds;
mod train;

pub use bounds::{classify_neuron, ActivationBounds, NeuronStatus};
pub use train::{read_dataset_csv, train, write_dataset_csv, TrainConfig, Trained};

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::{Error, Matrix, Result, Vector};

/// One affine layer `z -> W z + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vector,
}

impl Layer {
    pub fn new(weight: Matrix, bias: Vector) -> Result<Self> {
        if weight.nrows() != bias.len() {
            return Err(Error::dim(weight.nrows(), bias.len(), "layer bias length"));
        }
        if weight.iter().any(|v| !v.is_finite()) || bias.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("layer weights".into()));
        }
        Ok(Layer { weight, bias })
    }

    /// Input width of the layer.
    pub fn fan_in(&self) -> usize {
        self.weight.ncols()
    }

    /// Output width of the layer.
    pub fn fan_out(&self) -> usize {
        self.weight.nrows()
    }
}

/// A feedforward ReLU network. The final layer is affine; all earlier layers
/// are followed by an elementwise `max(., 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReluNetwork {
    layers: Vec<Layer>,
}

impl ReluNetwork {
    /// Builds a network, checking that consecutive layer dimensions chain.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[1].fan_in() != pair[0].fan_out() {
                return Err(Error::dim(
                    pair[0].fan_out(),
                    pair[1].fan_in(),
                    &format!("layer {} input width", i + 1),
                ));
            }
        }
        Ok(ReluNetwork { layers })
    }

    /// A network computing the constant zero map of the given shape.
    pub fn zero(input_dim: usize, output_dim: usize) -> Self {
        ReluNetwork {
            layers: vec![Layer {
                weight: Matrix::zeros(output_dim, input_dim),
                bias: Vector::zeros(output_dim),
            }],
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    /// Number of hidden (ReLU) layers.
    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    /// Total number of hidden neurons.
    pub fn hidden_neurons(&self) -> usize {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(Layer::fan_out)
            .sum()
    }

    /// Evaluates the network, checking the input first.
    pub fn forward(&self, x: &Vector) -> Result<Vector> {
        if x.len() != self.input_dim() {
            return Err(Error::dim(self.input_dim(), x.len(), "network input"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        Ok(self.eval(x))
    }

    /// Evaluates the network without input validation (hot path).
    pub fn eval(&self, x: &Vector) -> Vector {
        debug_assert_eq!(x.len(), self.input_dim());
        let last = self.layers.len() - 1;
        let mut z = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            z = &layer.weight * z + &layer.bias;
            if l < last {
                z.apply(|v| *v = v.max(0.0));
            }
        }
        z
    }

    /// Evaluates the network, returning the pre-activation of every layer
    /// (the last entry is the network output).
    pub fn eval_trace(&self, x: &Vector) -> Vec<Vector> {
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut z = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let p = &layer.weight * &z + &layer.bias;
            pre.push(p.clone());
            if l < last {
                z = p;
                z.apply(|v| *v = v.max(0.0));
            }
        }
        pre
    }

    /// Activation pattern at `x`: `true` for every hidden neuron with
    /// nonnegative pre-activation, layer by layer.
    pub fn activation_pattern(&self, x: &Vector) -> Vec<Vec<bool>> {
        let pre = self.eval_trace(x);
        pre[..pre.len() - 1]
            .iter()
            .map(|p| p.iter().map(|v| *v >= 0.0).collect())
            .collect()
    }

    /// Upper bound on the l-inf Lipschitz constant of `x -> A x + net(x)`:
    /// the induced inf-norm of `A` plus the product of layer norms
    /// (sound since ReLU is 1-Lipschitz).
    pub fn lipschitz_upper(&self, a: &Matrix) -> f64 {
        let a_norm = inf_norm(a);
        let prod: f64 = self.layers.iter().map(|l| inf_norm(&l.weight)).product();
        a_norm + prod
    }

    /// Serializes to the portable JSON schema.
    pub fn to_json(&self) -> String {
        let file = NetworkFile {
            schema_version: SCHEMA_VERSION,
            layers: self
                .layers
                .iter()
                .map(|l| LayerJson {
                    w: (0..l.weight.nrows())
                        .map(|i| l.weight.row(i).iter().copied().collect())
                        .collect(),
                    b: l.bias.iter().copied().collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("network serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: NetworkFile =
            serde_json::from_str(text).map_err(|e| Error::MalformedFile {
                path: "<inline json>".into(),
                reason: e.to_string(),
            })?;
        let mut layers = Vec::with_capacity(file.layers.len());
        for lj in &file.layers {
            let rows = lj.w.len();
            if rows == 0 {
                return Err(Error::invalid("layer with zero rows"));
            }
            let cols = lj.w[0].len();
            if lj.w.iter().any(|r| r.len() != cols) {
                return Err(Error::invalid("ragged weight matrix"));
            }
            let weight = Matrix::from_row_iterator(rows, cols, lj.w.iter().flatten().copied());
            let bias = Vector::from_vec(lj.b.clone());
            layers.push(Layer::new(weight, bias)?);
        }
        ReluNetwork::new(layers)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::MalformedFile { reason, .. } => Error::MalformedFile {
                path: path.display().to_string(),
                reason,
            },
            other => other,
        })
    }
}

const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    #[serde(default = "default_schema_version")]
    schema_version: u32,
    layers: Vec<LayerJson>,
}

fn default_schema_version() -> u32 {
    1
}

#[derive(Serialize, Deserialize)]
struct LayerJson {
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

/// Induced inf-norm (max absolute row sum).
pub fn inf_norm(m: &Matrix) -> f64 {
    (0..m.nrows())
        .map(|i| m.row(i).iter().map(|v| v.abs()).sum())
        .fold(0.0, f64::max)
}
