use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::gemm;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
        }
    }

    /// ReLU hidden layers and identity logits for widths `[in, h1, ..., K]`.
    pub fn mlp(widths: &[usize]) -> Vec<LayerSpec> {
        let n = widths.len().saturating_sub(1);
        widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 1 == n {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                LayerSpec::new(w[0], w[1], act)
            })
            .collect()
    }
}

/// Checks that a layer list is non-empty, has positive widths, chains, and ends in logits.
pub fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Shape("model needs at least one layer".into()));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.in_dim == 0 || s.out_dim == 0 {
            return Err(Error::Shape(format!("layer {i} has a zero dimension")));
        }
    }
    for (i, w) in specs.windows(2).enumerate() {
        if w[0].out_dim != w[1].in_dim {
            return Err(Error::Shape(format!(
                "layer {i} outputs {} but layer {} expects {}",
                w[0].out_dim,
                i + 1,
                w[1].in_dim
            )));
        }
    }
    if specs.last().map(|s| s.activation) != Some(Activation::Identity) {
        return Err(Error::Shape("final layer must use identity activation".into()));
    }
    Ok(())
}

/// One dense layer's parameters. `weights` is row-major `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub spec: LayerSpec,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Ordered per-layer parameter blocks of a feed-forward classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layers: Vec<DenseLayer>,
}

/// Gradient with the same block structure as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<LayerGrad>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Output of a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Post-activation output of every layer; the last entry equals `logits`.
    pub activations: Vec<Tensor>,
    pub logits: Tensor,
}

impl ModelParams {
    /// He-style initialization: weights ~ N(0, 2/in_dim), biases zero.
    pub fn init(specs: &[LayerSpec], seed: u64) -> Result<Self> {
        validate_specs(specs)?;
        let mut rng = seed::derived_rng(seed, &[seed::stream::INIT]);
        let layers = specs
            .iter()
            .map(|&spec| {
                let std = (2.0 / spec.in_dim as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                let weights = (0..spec.in_dim * spec.out_dim)
                    .map(|_| normal.sample(&mut rng))
                    .collect();
                DenseLayer {
                    spec,
                    weights,
                    bias: vec![0.0; spec.out_dim],
                }
            })
            .collect();
        Ok(Self { layers })
    }

    /// Builds parameters from explicit blocks, validating shapes and finiteness.
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        let specs: Vec<LayerSpec> = layers.iter().map(|l| l.spec).collect();
        validate_specs(&specs)?;
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.spec.in_dim * l.spec.out_dim || l.bias.len() != l.spec.out_dim {
                return Err(Error::Shape(format!("layer {i} block sizes disagree with its spec")));
            }
        }
        let p = Self { layers };
        p.check_finite()?;
        Ok(p)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.in_dim
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.out_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(DenseLayer::num_params).sum()
    }

    /// Parameters laid out layer by layer, weights before bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Inverse of [`ModelParams::flatten`] for the given architecture.
    pub fn unflatten(specs: &[LayerSpec], flat: &[f64]) -> Result<Self> {
        validate_specs(specs)?;
        let need: usize = specs.iter().map(|s| s.in_dim * s.out_dim + s.out_dim).sum();
        if need != flat.len() {
            return Err(Error::Shape(format!(
                "architecture needs {need} values, got {}",
                flat.len()
            )));
        }
        let mut off = 0;
        let mut layers = Vec::with_capacity(specs.len());
        for &spec in specs {
            let nw = spec.in_dim * spec.out_dim;
            let weights = flat[off..off + nw].to_vec();
            off += nw;
            let bias = flat[off..off + spec.out_dim].to_vec();
            off += spec.out_dim;
            layers.push(DenseLayer {
                spec,
                weights,
                bias,
            });
        }
        Self::from_layers(layers)
    }

    pub fn check_finite(&self) -> Result<()> {
        let ok = self
            .layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()));
        if ok {
            Ok(())
        } else {
            Err(Error::Numeric("parameters contain non-finite values".into()))
        }
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.spec.in_dim == b.spec.in_dim && a.spec.out_dim == b.spec.out_dim)
    }

    pub(crate) fn ensure_same_shape(&self, other: &ModelParams) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape("parameter sets have different architectures".into()))
        }
    }

    /// Runs the network on an `n x in_dim` batch.
    pub fn forward(&self, batch: &Tensor) -> Result<ForwardPass> {
        if batch.shape().len() != 2 || batch.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch shape {:?} does not match input width {}",
                batch.shape(),
                self.input_dim()
            )));
        }
        let n = batch.rows();
        let mut activations: Vec<Tensor> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = activations.last().unwrap_or(batch).values();
            let out = dense_forward(layer, input, n);
            activations.push(Tensor::from_parts_unchecked(vec![n, layer.spec.out_dim], out));
        }
        let logits = activations.last().expect("at least one layer").clone();
        if logits.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("forward pass produced non-finite logits".into()));
        }
        Ok(ForwardPass {
            activations,
            logits,
        })
    }

    /// Mean softmax cross-entropy over the batch and its exact gradient.
    pub fn loss_and_grad(&self, batch: &Tensor, labels: &[usize]) -> Result<(f64, Gradient)> {
        let n = batch.rows();
        if n == 0 {
            return Err(Error::Domain("empty batch".into()));
        }
        if labels.len() != n {
            return Err(Error::Shape(format!("{n} samples but {} labels", labels.len())));
        }
        let k = self.num_classes();
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Domain(format!("label {bad} out of range for {k} classes")));
        }
        let pass = self.forward(batch)?;

        // delta = (softmax - onehot) / n
        let mut delta = vec![0.0; n * k];
        let mut loss = 0.0;
        for i in 0..n {
            let z = pass.logits.row(i);
            let probs = softmax(z);
            let lse = log_sum_exp(z);
            loss += lse - z[labels[i]];
            let row = &mut delta[i * k..(i + 1) * k];
            for (d, p) in row.iter_mut().zip(&probs) {
                *d = p / n as f64;
            }
            row[labels[i]] -= 1.0 / n as f64;
        }
        loss /= n as f64;

        let mut grads: Vec<LayerGrad> = Vec::with_capacity(self.layers.len());
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let (din, dout) = (layer.spec.in_dim, layer.spec.out_dim);
            let input = if li == 0 {
                batch.values()
            } else {
                pass.activations[li - 1].values()
            };
            let mut gw = vec![0.0; dout * din];
            gemm::at_b(dout, n, din, &delta, input, &mut gw);
            let mut gb = vec![0.0; dout];
            for row in delta.chunks_exact(dout) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            grads.push(LayerGrad {
                weights: gw,
                bias: gb,
            });
            if li > 0 {
                let mut prev = vec![0.0; n * din];
                gemm::a_b(n, dout, din, &delta, &layer.weights, &mut prev);
                let prev_act = &self.layers[li - 1].spec.activation;
                if *prev_act == Activation::Relu {
                    for (d, a) in prev.iter_mut().zip(pass.activations[li - 1].values()) {
                        if *a <= 0.0 {
                            *d = 0.0;
                        }
                    }
                }
                delta = prev;
            }
        }
        grads.reverse();
        Ok((loss, Gradient { layers: grads }))
    }

    /// In-place `p -= lr * g`.
    pub fn apply_gradient(&mut self, grad: &Gradient, lr: f64) -> Result<()> {
        if grad.layers.len() != self.layers.len()
            || self.layers.iter().zip(&grad.layers).any(|(l, g)| {
                l.weights.len() != g.weights.len() || l.bias.len() != g.bias.len()
            })
        {
            return Err(Error::Shape("gradient does not match parameters".into()));
        }
        for (l, g) in self.layers.iter_mut().zip(&grad.layers) {
            for (p, d) in l.weights.iter_mut().zip(&g.weights) {
                *p -= lr * d;
            }
            for (p, d) in l.bias.iter_mut().zip(&g.bias) {
                *p -= lr * d;
            }
        }
        Ok(())
    }

    /// Returns `p - lr * g` without touching `self`.
    pub fn sgd_step(&self, grad: &Gradient, lr: f64) -> Result<ModelParams> {
        if !(lr >= 0.0) {
            return Err(Error::Domain(format!("learning rate must be >= 0, got {lr}")));
        }
        let mut next = self.clone();
        next.apply_gradient(grad, lr)?;
        Ok(next)
    }

    /// Per-sample argmax class (lowest index on ties) and its softmax probability.
    pub fn predict_confidences(&self, batch: &Tensor) -> Result<(Vec<usize>, Vec<f64>)> {
        let pass = self.forward(batch)?;
        let n = batch.rows();
        let mut labels = Vec::with_capacity(n);
        let mut conf = Vec::with_capacity(n);
        for i in 0..n {
            let probs = softmax(pass.logits.row(i));
            let (arg, p) = argmax(&probs);
            labels.push(arg);
            conf.push(p);
        }
        Ok((labels, conf))
    }
}

impl Gradient {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradient {
            layers: params
                .layers()
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }
}

fn dense_forward(layer: &DenseLayer, input: &[f64], n: usize) -> Vec<f64> {
    let (din, dout) = (layer.spec.in_dim, layer.spec.out_dim);
    let mut out = vec![0.0; n * dout];
    gemm::a_bt(n, din, dout, input, &layer.weights, &mut out);
    for row in out.chunks_exact_mut(dout) {
        for (v, b) in row.iter_mut().zip(&layer.bias) {
            *v += b;
            if layer.spec.activation == Activation::Relu && *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    out
}

pub(crate) fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Cross-entropy of one logit row against `label`.
pub(crate) fn cross_entropy(z: &[f64], label: usize) -> f64 {
    log_sum_exp(z) - z[label]
}

fn argmax(v: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    (best, v[best])
}

/// Squared Euclidean distance over every coordinate.
pub fn param_sq_distance(a: &ModelParams, b: &ModelParams) -> Result<f64> {
    a.ensure_same_shape(b)?;
    Ok((0..a.num_layers()).map(|l| block_sq_distance(a, b, l)).sum())
}

/// Squared distance restricted to one layer's weight and bias block (0-based `layer`).
pub fn layer_sq_distance(a: &ModelParams, b: &ModelParams, layer: usize) -> Result<f64> {
    a.ensure_same_shape(b)?;
    if layer >= a.num_layers() {
        return Err(Error::Domain(format!(
            "layer {layer} out of range for a {}-layer model",
            a.num_layers()
        )));
    }
    Ok(block_sq_distance(a, b, layer))
}

fn block_sq_distance(a: &ModelParams, b: &ModelParams, layer: usize) -> f64 {
    let (la, lb) = (&a.layers[layer], &b.layers[layer]);
    la.weights
        .iter()
        .zip(&lb.weights)
        .chain(la.bias.iter().zip(&lb.bias))
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}
