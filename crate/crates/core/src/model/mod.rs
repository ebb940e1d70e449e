//! Fully connected ELU classifier with inverted dropout.
//!
//! The embedding `f(x)` is the post-activation output of the last hidden
//! layer (before dropout is applied to it). The output layer is linear and
//! produces logits.

mod checkpoint;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::numerics::{elu_derivative_scalar, elu_scalar, stable_softmax, Matrix, SeededRng};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

/// One affine layer: `weights` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    layers: Vec<Layer>,
    dropout_probs: Vec<f64>,
}

/// Whether dropout masks are sampled during a forward pass.
pub enum ForwardMode<'a> {
    Deterministic,
    Dropout(&'a mut SeededRng),
}

/// Intermediate values kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input fed to each layer (after dropout for hidden outputs).
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activations of each hidden layer.
    pub pre_activations: Vec<Vec<f64>>,
    /// Per-unit dropout scale (0 or 1/(1-p)) for each hidden layer, if sampled.
    pub masks: Vec<Option<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub struct ForwardResult {
    pub embedding: Vec<f64>,
    pub logits: Vec<f64>,
    pub cache: ForwardCache,
}

impl ForwardResult {
    pub fn probabilities(&self) -> Vec<f64> {
        stable_softmax(&self.logits)
    }
}

/// Parameter-shaped gradient buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Gradients {
            weights: model
                .layers
                .iter()
                .map(|l| vec![0.0; l.weights.as_slice().len()])
                .collect(),
            biases: model
                .layers
                .iter()
                .map(|l| vec![0.0; l.bias.len()])
                .collect(),
        }
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    /// Flattened in the same order as [`MlpModel::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .flatten()
            .all(|v| v.is_finite())
    }
}

impl MlpModel {
    /// Random Glorot-uniform weights, zero biases.
    ///
    /// `layer_sizes` is `[input, hidden..., classes]` with at least one hidden
    /// layer; `dropout_probs` has one entry per hidden layer.
    pub fn new(layer_sizes: &[usize], dropout_probs: &[f64], rng: &mut SeededRng) -> Result<Self> {
        validate_architecture(layer_sizes, dropout_probs)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
                let data = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
                Layer {
                    weights: Matrix::new(fan_out, fan_in, data).expect("shape by construction"),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(MlpModel {
            layer_sizes: layer_sizes.to_vec(),
            layers,
            dropout_probs: dropout_probs.to_vec(),
        })
    }

    /// Assemble from explicit layers. Shapes must chain.
    pub fn from_layers(layers: Vec<Layer>, dropout_probs: Vec<f64>) -> Result<Self> {
        let mut sizes = Vec::with_capacity(layers.len() + 1);
        if let Some(first) = layers.first() {
            sizes.push(first.weights.cols());
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.cols() != *sizes.last().unwrap() {
                return Err(Error::usage(format!(
                    "layer {i} expects {} inputs but previous layer has {} outputs",
                    l.weights.cols(),
                    sizes.last().unwrap()
                )));
            }
            if l.bias.len() != l.weights.rows() {
                return Err(Error::usage(format!(
                    "layer {i} bias length {} != {} outputs",
                    l.bias.len(),
                    l.weights.rows()
                )));
            }
            sizes.push(l.weights.rows());
        }
        validate_architecture(&sizes, &dropout_probs)?;
        Ok(MlpModel {
            layer_sizes: sizes,
            layers,
            dropout_probs,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn dropout_probs(&self) -> &[f64] {
        &self.dropout_probs
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Index into `layer_sizes` of the embedding layer (the penultimate one).
    pub fn embedding_layer(&self) -> usize {
        self.layer_sizes.len() - 2
    }

    pub fn embedding_dim(&self) -> usize {
        self.layer_sizes[self.embedding_layer()]
    }

    pub fn has_dropout(&self) -> bool {
        self.dropout_probs.iter().any(|&p| p > 0.0)
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.len())
            .sum()
    }

    /// All parameters, layer by layer: weights (row-major) then biases.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_parameters() {
            return Err(Error::usage(format!(
                "expected {} parameters, got {}",
                self.num_parameters(),
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::usage("non-finite parameter"));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let n = l.weights.as_slice().len();
            l.weights
                .as_mut_slice()
                .copy_from_slice(&params[off..off + n]);
            off += n;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Apply `update(param, grad)` in place to every parameter.
    pub(crate) fn for_each_parameter(
        &mut self,
        grads: &Gradients,
        mut update: impl FnMut(usize, &mut f64, f64),
    ) {
        let mut idx = 0;
        for (l, (gw, gb)) in self
            .layers
            .iter_mut()
            .zip(grads.weights.iter().zip(&grads.biases))
        {
            for (p, &g) in l.weights.as_mut_slice().iter_mut().zip(gw) {
                update(idx, p, g);
                idx += 1;
            }
            for (p, &g) in l.bias.iter_mut().zip(gb) {
                update(idx, p, g);
                idx += 1;
            }
        }
    }

    pub fn forward(&self, x: &[f64], mode: ForwardMode<'_>) -> Result<ForwardResult> {
        if x.len() != self.input_dim() {
            return Err(Error::usage(format!(
                "input has dimension {}, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(self.forward_unchecked(x, mode))
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64], mut mode: ForwardMode<'_>) -> ForwardResult {
        let hidden = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(hidden);
        let mut masks = Vec::with_capacity(hidden);
        let mut embedding = Vec::new();
        let mut current = x.to_vec();

        for (li, layer) in self.layers[..hidden].iter().enumerate() {
            let mut z = layer.weights.matvec(&current);
            for (v, b) in z.iter_mut().zip(&layer.bias) {
                *v += b;
            }
            let mut h: Vec<f64> = z.iter().map(|&v| elu_scalar(v)).collect();
            if li == hidden - 1 {
                embedding = h.clone();
            }
            let p = self.dropout_probs[li];
            let mask = match &mut mode {
                ForwardMode::Dropout(rng) if p > 0.0 => {
                    let keep = 1.0 / (1.0 - p);
                    let m: Vec<f64> = (0..h.len())
                        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                        .collect();
                    for (v, s) in h.iter_mut().zip(&m) {
                        *v *= s;
                    }
                    Some(m)
                }
                _ => None,
            };
            inputs.push(current);
            pre_activations.push(z);
            masks.push(mask);
            current = h;
        }

        let out = &self.layers[hidden];
        let mut logits = out.weights.matvec(&current);
        for (v, b) in logits.iter_mut().zip(&out.bias) {
            *v += b;
        }
        inputs.push(current);

        ForwardResult {
            embedding,
            logits,
            cache: ForwardCache {
                inputs,
                pre_activations,
                masks,
            },
        }
    }

    /// Deterministic embedding `f(x)`.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x, ForwardMode::Deterministic)?.embedding)
    }

    /// Deterministic softmax output.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x, ForwardMode::Deterministic)?.probabilities())
    }

    /// Backpropagate one sample.
    ///
    /// `grad_logits` is dL/dlogits; `grad_embedding`, when given, is an extra
    /// dL/d f(x) term (the pairwise loss acts on the embedding directly).
    /// Returns parameter gradients and dL/dx.
    pub fn backprop(
        &self,
        cache: &ForwardCache,
        grad_logits: &[f64],
        grad_embedding: Option<&[f64]>,
    ) -> (Gradients, Vec<f64>) {
        let mut grads = Gradients::zeros_like(self);
        let gx = self.backprop_impl(cache, grad_logits, grad_embedding, Some(&mut grads), true);
        (grads, gx)
    }

    /// Add one sample's parameter gradients to `grads`.
    pub(crate) fn backprop_into(
        &self,
        cache: &ForwardCache,
        grad_logits: &[f64],
        grad_embedding: Option<&[f64]>,
        grads: &mut Gradients,
    ) {
        self.backprop_impl(cache, grad_logits, grad_embedding, Some(grads), false);
    }

    /// dL/dx only.
    pub(crate) fn backprop_input(&self, cache: &ForwardCache, grad_logits: &[f64]) -> Vec<f64> {
        self.backprop_impl(cache, grad_logits, None, None, true)
    }

    fn backprop_impl(
        &self,
        cache: &ForwardCache,
        grad_logits: &[f64],
        grad_embedding: Option<&[f64]>,
        mut grads: Option<&mut Gradients>,
        want_input: bool,
    ) -> Vec<f64> {
        let hidden = self.layers.len() - 1;
        let mut delta = grad_logits.to_vec();

        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            if let Some(grads) = grads.as_deref_mut() {
                let input = &cache.inputs[li];
                let gw = &mut grads.weights[li];
                for (r, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &mut gw[r * input.len()..(r + 1) * input.len()];
                    for (g, &a) in row.iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
                for (b, &d) in grads.biases[li].iter_mut().zip(&delta) {
                    *b += d;
                }
            }
            if li == 0 {
                return if want_input {
                    layer.weights.matvec_transposed(&delta)
                } else {
                    Vec::new()
                };
            }

            let mut g_in = layer.weights.matvec_transposed(&delta);
            let below = li - 1;
            if let Some(mask) = &cache.masks[below] {
                for (g, m) in g_in.iter_mut().zip(mask) {
                    *g *= m;
                }
            }
            if below == hidden - 1 {
                if let Some(ge) = grad_embedding {
                    for (g, e) in g_in.iter_mut().zip(ge) {
                        *g += e;
                    }
                }
            }
            for (g, &z) in g_in.iter_mut().zip(&cache.pre_activations[below]) {
                *g *= elu_derivative_scalar(z);
            }
            delta = g_in;
        }
        unreachable!("loop returns at the input layer")
    }
}

fn validate_architecture(layer_sizes: &[usize], dropout_probs: &[f64]) -> Result<()> {
    if layer_sizes.len() < 3 {
        return Err(Error::usage(
            "need input, at least one hidden layer, and output sizes",
        ));
    }
    if let Some(i) = layer_sizes.iter().position(|&s| s == 0) {
        return Err(Error::usage(format!("layer {i} has zero width")));
    }
    let hidden = layer_sizes.len() - 2;
    if dropout_probs.len() != hidden {
        return Err(Error::usage(format!(
            "{} dropout probabilities for {hidden} hidden layers",
            dropout_probs.len()
        )));
    }
    if let Some(p) = dropout_probs.iter().find(|p| !(0.0..1.0).contains(*p)) {
        return Err(Error::usage(format!(
            "dropout probability {p} outside [0,1)"
        )));
    }
    Ok(())
}
