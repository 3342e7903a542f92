use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{standard_normal, DenseMatrix};
use crate::error::{Error, Result};

/// Hidden-layer nonlinearity. The output layer is always affine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

/// One affine map `y = W x + b` with `W` stored as `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: DenseMatrix,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: DenseMatrix::zeros(outputs, inputs),
            bias: vec![0.0; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }
}

/// Stack of affine layers with a hidden nonlinearity between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
    activation: Activation,
}

/// Gradients with exactly the layout of the [`Mlp`] they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<Layer>,
}

/// Per-layer inputs recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<DenseMatrix>,
    dims: Vec<usize>,
}

impl Mlp {
    /// All-zero network; `dims` lists the input width followed by each layer's width.
    pub fn zeros(dims: &[usize], activation: Activation) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidConfig(
                "an MLP needs at least an input and an output width".into(),
            ));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidConfig("MLP widths must be positive".into()));
        }
        let layers = dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Ok(Self { layers, activation })
    }

    /// Glorot-normal weights and zero biases.
    pub fn seeded<R: Rng + ?Sized>(dims: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(dims, activation)?;
        for layer in &mut net.layers {
            let std = (2.0 / (layer.inputs() + layer.outputs()) as f64).sqrt();
            for w in layer.weights.data_mut() {
                *w = std * standard_normal(rng);
            }
        }
        Ok(net)
    }

    /// Builds a network from explicit layers, checking that widths chain.
    pub fn from_layers(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("MLP layers"));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::DimensionMismatch {
                    context: "MLP layer chaining",
                    expected: pair[0].outputs(),
                    actual: pair[1].inputs(),
                });
            }
        }
        for layer in &layers {
            if layer.bias.len() != layer.outputs() {
                return Err(Error::DimensionMismatch {
                    context: "MLP bias length",
                    expected: layer.outputs(),
                    actual: layer.bias.len(),
                });
            }
            crate::error::ensure_finite(layer.weights.data(), "MLP weights")?;
            crate::error::ensure_finite(&layer.bias, "MLP bias")?;
        }
        Ok(Self { layers, activation })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::outputs))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.data().len() + l.bias.len())
            .sum()
    }

    /// Forward pass over a batch (`rows = samples`).
    pub fn forward_batch(&self, input: &DenseMatrix) -> Result<(DenseMatrix, MlpCache)> {
        if input.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "MLP input",
                expected: self.input_dim(),
                actual: input.cols(),
            });
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = x.matmul_nt(&layer.weights)?;
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            if l < last && self.activation == Activation::Tanh {
                for v in z.data_mut() {
                    *v = v.tanh();
                }
            }
            inputs.push(std::mem::replace(&mut x, z));
        }
        Ok((
            x,
            MlpCache {
                inputs,
                dims: self.dims(),
            },
        ))
    }

    /// Single-vector forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        let x = DenseMatrix::from_vec(1, input.len(), input.to_vec())?;
        let (y, cache) = self.forward_batch(&x)?;
        Ok((y.into_data(), cache))
    }

    /// Forward pass without keeping a cache.
    pub fn apply_batch(&self, input: &DenseMatrix) -> Result<DenseMatrix> {
        self.forward_batch(input).map(|(y, _)| y)
    }

    /// Backpropagates `output_grad` (∂loss/∂output, `batch × out`) through the
    /// pass recorded in `cache`; returns parameter gradients summed over the
    /// batch and ∂loss/∂input.
    pub fn backward_batch(
        &self,
        cache: &MlpCache,
        output_grad: &DenseMatrix,
    ) -> Result<(MlpGrads, DenseMatrix)> {
        if cache.dims != self.dims() || cache.inputs.len() != self.layers.len() {
            return Err(Error::StaleCache("cache was produced by a different network shape"));
        }
        let batch = cache.inputs[0].rows();
        if output_grad.shape() != (batch, self.output_dim()) {
            return Err(Error::StaleCache("output gradient does not match cached batch"));
        }
        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        let mut delta = output_grad.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.inputs[l];
            let weights = delta.matmul_tn(x)?;
            let mut bias = vec![0.0; layer.outputs()];
            for row in delta.iter_rows() {
                for (b, d) in bias.iter_mut().zip(row) {
                    *b += d;
                }
            }
            grads.push(Layer { weights, bias });
            let mut prev = delta.matmul(&layer.weights)?;
            if l > 0 && self.activation == Activation::Tanh {
                // x holds tanh outputs of the previous layer
                for (p, a) in prev.data_mut().iter_mut().zip(x.data()) {
                    *p *= 1.0 - a * a;
                }
            }
            delta = prev;
        }
        grads.reverse();
        Ok((MlpGrads { layers: grads }, delta))
    }

    /// Single-vector backward pass.
    pub fn backward(&self, cache: &MlpCache, output_grad: &[f64]) -> Result<(MlpGrads, Vec<f64>)> {
        let g = DenseMatrix::from_vec(1, output_grad.len(), output_grad.to_vec())
            .map_err(|_| Error::StaleCache("output gradient does not match cached batch"))?;
        let (grads, input_grad) = self.backward_batch(cache, &g)?;
        Ok((grads, input_grad.into_data()))
    }

    /// Appends every parameter (layer by layer, weights then bias).
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(l.weights.data());
            out.extend_from_slice(&l.bias);
        }
    }

    /// Inverse of [`Mlp::write_flat`]; returns the unread tail.
    pub fn read_flat<'a>(&mut self, mut flat: &'a [f64]) -> &'a [f64] {
        for l in &mut self.layers {
            let n = l.weights.data().len();
            l.weights.data_mut().copy_from_slice(&flat[..n]);
            flat = &flat[n..];
            let n = l.bias.len();
            l.bias.copy_from_slice(&flat[..n]);
            flat = &flat[n..];
        }
        flat
    }
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs(), l.outputs()))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) -> Result<()> {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.add_assign(&b.weights)?;
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(l.weights.data());
            out.extend_from_slice(&l.bias);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.data().iter().chain(&l.bias).all(|v| *v == 0.0))
    }
}
