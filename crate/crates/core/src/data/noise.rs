//! Client-level noise models and symmetric label flipping.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::partition::ClientAssignment;
use crate::error::{Error, Result};
use crate::seed;

/// How noise rates are assigned to clients. Flipping is always symmetric: a corrupted
/// label moves to each of the other `K - 1` classes with equal probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    /// Every client is clean.
    None,
    /// A client is clean with probability `p`; otherwise `within_rate` of its labels flip.
    Bernoulli {
        p: f64,
        #[serde(default = "default_within_rate")]
        within_rate: f64,
    },
    /// Exactly `noisy_clients` clients, chosen uniformly at random, flip `within_rate`
    /// of their labels; the rest are clean.
    Count {
        noisy_clients: usize,
        #[serde(default = "default_within_rate")]
        within_rate: f64,
    },
    /// Per-client noise rate drawn from N(mu, sigma^2) truncated to `[a, b]`.
    TruncGauss {
        mu: f64,
        sigma: f64,
        #[serde(default)]
        a: f64,
        #[serde(default = "default_b")]
        b: f64,
    },
}

fn default_within_rate() -> f64 {
    1.0
}
fn default_b() -> f64 {
    1.0
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec::None
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseSpec::None => Ok(()),
            NoiseSpec::Bernoulli { p, within_rate } => {
                if !(p > 0.0 && p <= 1.0) {
                    return Err(Error::config("noise.p", "clean probability must be in (0, 1]"));
                }
                if !(0.0..=1.0).contains(&within_rate) {
                    return Err(Error::config("noise.within_rate", "must be in [0, 1]"));
                }
                Ok(())
            }
            NoiseSpec::Count { within_rate, .. } => {
                if !(0.0..=1.0).contains(&within_rate) {
                    return Err(Error::config("noise.within_rate", "must be in [0, 1]"));
                }
                Ok(())
            }
            NoiseSpec::TruncGauss { mu, sigma, a, b } => {
                if !mu.is_finite() {
                    return Err(Error::config("noise.mu", "must be finite"));
                }
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::config("noise.sigma", "must be > 0"));
                }
                if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || !(a < b) {
                    return Err(Error::config("noise.a", "bounds must satisfy 0 <= a < b <= 1"));
                }
                Ok(())
            }
        }
    }
}

/// Inverse-CDF draws from N(mu, sigma^2) truncated to `[a, b]`.
pub fn sample_truncated_gaussian(mu: f64, sigma: f64, a: f64, b: f64, seed: u64, count: usize) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !(a < b) || !mu.is_finite() {
        return Err(Error::Domain(format!(
            "truncated Gaussian needs sigma > 0 and a < b (mu={mu}, sigma={sigma}, a={a}, b={b})"
        )));
    }
    let mut rng = seed::rng(seed);
    Ok((0..count)
        .map(|_| truncated_gaussian_draw(mu, sigma, a, b, rng.random::<f64>()))
        .collect())
}

fn truncated_gaussian_draw(mu: f64, sigma: f64, a: f64, b: f64, u: f64) -> f64 {
    let std = Normal::standard();
    let (lo, hi) = ((a - mu) / sigma, (b - mu) / sigma);
    // Work in the lower tail when the window sits above the mean: CDF values near 1
    // lose precision, values near 0 do not.
    let z = if lo > 0.0 {
        let (pl, ph) = (std.cdf(-hi), std.cdf(-lo));
        -std.inverse_cdf(pl + u * (ph - pl))
    } else {
        let (pl, ph) = (std.cdf(lo), std.cdf(hi));
        std.inverse_cdf(pl + u * (ph - pl))
    };
    (mu + sigma * z).clamp(a, b)
}

/// One noise rate per client.
pub fn sample_client_noise_rates(spec: &NoiseSpec, clients: usize, seed: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    let s = seed::derive(seed, &[seed::stream::NOISE_RATES]);
    Ok(match *spec {
        NoiseSpec::None => vec![0.0; clients],
        NoiseSpec::Bernoulli { p, within_rate } => {
            let mut rng = seed::rng(s);
            (0..clients)
                .map(|_| if rng.random::<f64>() < p { 0.0 } else { within_rate })
                .collect()
        }
        NoiseSpec::Count {
            noisy_clients,
            within_rate,
        } => {
            if noisy_clients > clients {
                return Err(Error::config(
                    "noise.noisy_clients",
                    format!("{noisy_clients} noisy clients requested but only {clients} exist"),
                ));
            }
            let mut rates = vec![0.0; clients];
            for c in rand::seq::index::sample(&mut seed::rng(s), clients, noisy_clients) {
                rates[c] = within_rate;
            }
            rates
        }
        NoiseSpec::TruncGauss { mu, sigma, a, b } => sample_truncated_gaussian(mu, sigma, a, b, s, clients)?,
    })
}

/// Re-draws the client's training labels from its true labels: exactly
/// `round(rate * n)` samples, chosen uniformly, move to a uniformly chosen
/// different class.
pub fn apply_symmetric_noise(
    assignment: &ClientAssignment,
    rate: f64,
    num_classes: usize,
    seed: u64,
) -> Result<ClientAssignment> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Domain(format!("noise rate {rate} outside [0, 1]")));
    }
    if num_classes < 2 && rate > 0.0 {
        return Err(Error::Domain("label flipping needs at least two classes".into()));
    }
    let n = assignment.len();
    let flips = ((rate * n as f64).round() as usize).min(n);
    let mut rng = seed::derived_rng(seed, &[seed::stream::FLIPS, assignment.client_id as u64]);
    let mut chosen = rand::seq::index::sample(&mut rng, n, flips).into_vec();
    chosen.sort_unstable();
    let mut noisy_labels = assignment.true_labels.clone();
    for i in chosen {
        let y = noisy_labels[i];
        noisy_labels[i] = (y + 1 + rng.random_range(0..num_classes - 1)) % num_classes;
    }
    Ok(ClientAssignment {
        noisy_labels,
        noise_rate: rate,
        relabeled: vec![false; assignment.len()],
        ..assignment.clone()
    })
}
