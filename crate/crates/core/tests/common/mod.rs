//! Independent reference computations shared by the integration tests. Nothing
//! here calls the crate's aggregation or statistics code; they recompute from
//! raw numbers so the library can be checked against them.
#![allow(dead_code)]

use std::path::PathBuf;

use fednoisy::client::{ClientConfig, ClientUpdate};
use fednoisy::config::{DatasetConfig, ExperimentConfig};
use fednoisy::data::NoiseSpec;
use fednoisy::nn::{Activation, DenseLayer, LayerSpec, ModelParams, Tensor};
use fednoisy::server::{Aggregator, ServerConfig};

pub fn mnist_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

/// The desk-scale MNIST setup: 2000-sample subset, 784-64-32-10, 20 clients,
/// batch 60, 10 local epochs, lr 0.2.
pub fn mnist_config(seed: u64, aggregator: Aggregator, noise: NoiseSpec, rounds: usize, t_corr: usize) -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetConfig::Mnist { dir: mnist_dir() },
        subset_size: 2000,
        hidden_layers: vec![64, 32],
        noise,
        client: ClientConfig {
            lr: 0.2,
            ..Default::default()
        },
        server: ServerConfig {
            aggregator,
            rounds,
            t_corr,
            ..Default::default()
        },
        seed,
        workers: 1,
        ..Default::default()
    }
}

pub fn synthetic_config(seed: u64, aggregator: Aggregator, noise: NoiseSpec, rounds: usize) -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetConfig::Synthetic {
            num_classes: 5,
            per_class: 200,
            test_per_class: 100,
            dim: 10,
            spread: 0.5,
        },
        subset_size: 0,
        hidden_layers: vec![16],
        noise,
        client: ClientConfig {
            lr: 0.1,
            local_epochs: 2,
            batch_size: 20,
            ..Default::default()
        },
        server: ServerConfig {
            aggregator,
            rounds,
            t_corr: rounds,
            num_clients: 10,
            ..Default::default()
        },
        seed,
        workers: 1,
        ..Default::default()
    }
}

/// Splitmix-style generator so oracles do not share the crate's RNG plumbing.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }
    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }
}

/// A model whose every weight and bias is drawn uniformly from `[-1, 1]`.
pub fn random_model(widths: &[usize], rng: &mut Lcg) -> ModelParams {
    let specs = LayerSpec::mlp(widths);
    let layers = specs
        .iter()
        .map(|s| DenseLayer {
            spec: *s,
            weights: (0..s.in_dim * s.out_dim).map(|_| rng.range(-1.0, 1.0)).collect(),
            bias: (0..s.out_dim).map(|_| rng.range(-1.0, 1.0)).collect(),
        })
        .collect();
    ModelParams::from_layers(layers).unwrap()
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut Lcg) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.range(-1.0, 1.0)).collect()).unwrap()
}

/// Mean cross-entropy written out from scratch: explicit loops, no GEMM.
pub fn reference_loss(model: &ModelParams, x: &Tensor, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let mut a: Vec<f64> = x.row(i).to_vec();
        for layer in model.layers() {
            let s = layer.spec;
            let mut z = vec![0.0; s.out_dim];
            for o in 0..s.out_dim {
                let mut acc = layer.bias[o];
                for k in 0..s.in_dim {
                    acc += layer.weights[o * s.in_dim + k] * a[k];
                }
                z[o] = match s.activation {
                    Activation::Relu => acc.max(0.0),
                    Activation::Identity => acc,
                };
            }
            a = z;
        }
        let m = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + a.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - a[y];
    }
    total / labels.len() as f64
}

/// Central finite differences of [`reference_loss`] for every parameter, in
/// flatten order.
pub fn finite_difference_grad(model: &ModelParams, x: &Tensor, labels: &[usize], h: f64) -> Vec<f64> {
    let specs = model.specs();
    let flat = model.flatten();
    (0..flat.len())
        .map(|j| {
            let mut p = flat.clone();
            p[j] += h;
            let up = reference_loss(&ModelParams::unflatten(&specs, &p).unwrap(), x, labels);
            p[j] -= 2.0 * h;
            let down = reference_loss(&ModelParams::unflatten(&specs, &p).unwrap(), x, labels);
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// True when any hidden pre-activation lies within `margin` of the ReLU kink,
/// where finite differences are not valid.
pub fn near_relu_kink(model: &ModelParams, x: &Tensor, margin: f64) -> bool {
    for i in 0..x.rows() {
        let mut a: Vec<f64> = x.row(i).to_vec();
        for layer in model.layers() {
            let s = layer.spec;
            let mut z = vec![0.0; s.out_dim];
            for o in 0..s.out_dim {
                let mut acc = layer.bias[o];
                for k in 0..s.in_dim {
                    acc += layer.weights[o * s.in_dim + k] * a[k];
                }
                if s.activation == Activation::Relu && acc.abs() < margin {
                    return true;
                }
                z[o] = if s.activation == Activation::Relu { acc.max(0.0) } else { acc };
            }
            a = z;
        }
    }
    false
}

/// Largest `|analytic - numeric| / max(|analytic|, |numeric|)` over coordinates
/// whose magnitude is above `floor` (below it both sides are rounding noise).
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let scale = a.abs().max(n.abs());
            if scale < floor {
                (a - n).abs() / floor
            } else {
                (a - n).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

/// Sort, drop `m` from each end, average the rest.
pub fn sort_trim_mean(values: &[f64], m: usize) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let kept = &v[m..v.len() - m];
    kept.iter().sum::<f64>() / kept.len() as f64
}

/// Update holding one flat parameter vector laid out as a single identity layer
/// `1 x dim` (weights) plus one bias.
pub fn update_from_flat(id: usize, flat: &[f64], n: usize) -> ClientUpdate {
    let dim = flat.len() - 1;
    let spec = LayerSpec::new(dim, 1, Activation::Identity);
    let params = ModelParams::unflatten(&[spec], flat).unwrap();
    ClientUpdate {
        client_id: id,
        params,
        h: 0.0,
        n_samples: n,
        round: 1,
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn population_std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Upper `1 - alpha` quantile of the chi-square distribution via bisection on
/// the regularized lower incomplete gamma function.
pub fn chi2_critical(df: usize, alpha: f64) -> f64 {
    let k = df as f64 / 2.0;
    let cdf = |x: f64| statrs::function::gamma::gamma_lr(k, x / 2.0);
    let (mut lo, mut hi) = (0.0, 10.0 * df as f64 + 100.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < 1.0 - alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn chi2_statistic(observed: &[usize], expected: &[f64]) -> f64 {
    observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum()
}

/// Standard normal CDF from the error function.
pub fn phi(x: f64) -> f64 {
    0.5 * (1.0 + statrs::function::erf::erf(x / std::f64::consts::SQRT_2))
}

/// Kolmogorov-Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic one-sample KS critical value at level `alpha`:
/// `sqrt(-ln(alpha / 2) / 2) / sqrt(n)`.
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

/// Spearman rank correlation (no ties expected).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut r = vec![0.0; v.len()];
        for (pos, &i) in idx.iter().enumerate() {
            r[i] = pos as f64;
        }
        r
    };
    let (rx, ry) = (rank(x), rank(y));
    let (mx, my) = (mean(&rx), mean(&ry));
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}
