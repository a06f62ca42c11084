//! Penalized layer-wise aggregation weights.

use serde::{Deserialize, Serialize};

use crate::client::ClientUpdate;
use crate::error::{Error, Result};
use crate::nn::{layer_sq_distance, ModelParams};

/// How the noisy-client factor `m` enters the per-layer score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyMode {
    /// `s = N / (m · d)`: flagged clients lose weight.
    #[default]
    Divisor,
    /// `s = m · N / d`: the multiplicative form, which boosts flagged clients.
    Literal,
}

/// `L x C` matrix of aggregation weights; every row is a probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    rows: Vec<Vec<f64>>,
}

impl WeightMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let c = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || c == 0 {
            return Err(Error::Shape("weight matrix must be non-empty".into()));
        }
        for (l, r) in rows.iter().enumerate() {
            if r.len() != c {
                return Err(Error::Shape(format!("row {l} has {} entries, expected {c}", r.len())));
            }
            if r.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
                return Err(Error::Domain(format!("row {l} has a negative or non-finite weight")));
            }
            let s: f64 = r.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Domain(format!("row {l} sums to {s}, not 1")));
            }
        }
        Ok(Self { rows })
    }

    pub fn uniform(layers: usize, clients: usize) -> Self {
        Self {
            rows: vec![vec![1.0 / clients as f64; clients]; layers],
        }
    }

    /// `(layers, clients)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.rows.len(), self.rows[0].len())
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<Vec<f64>> {
        self.rows
    }
}

/// Penalty factor: 1 for clean clients, `min(T/T_k · τ, τ)` for flagged ones.
pub fn penalty_m(client: usize, round: usize, noisy: &[usize], tau: f64, t_k: usize) -> f64 {
    if noisy.contains(&client) {
        (round as f64 / t_k as f64 * tau).min(tau)
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerwiseParams {
    pub tau: f64,
    pub t_k: usize,
    pub mode: PenaltyMode,
}

/// Per layer `l`: `d = 1 + ‖Θ_l^G − Θ_l^c‖²`, score from `N_c`, `d` and the penalty,
/// normalized over clients.
pub fn layerwise_weights(
    updates: &[ClientUpdate],
    global: &ModelParams,
    noisy: &[usize],
    round: usize,
    params: &LayerwiseParams,
) -> Result<WeightMatrix> {
    if updates.is_empty() {
        return Err(Error::Domain("no updates to weight".into()));
    }
    let layers = global.num_layers();
    let m: Vec<f64> = updates
        .iter()
        .map(|u| penalty_m(u.client_id, round, noisy, params.tau, params.t_k))
        .collect();
    let mut rows = Vec::with_capacity(layers);
    for l in 0..layers {
        let mut s = Vec::with_capacity(updates.len());
        for (u, &m) in updates.iter().zip(&m) {
            let d = 1.0 + layer_sq_distance(global, &u.params, l)?;
            let n = u.n_samples as f64;
            s.push(match params.mode {
                PenaltyMode::Divisor => n / (m * d),
                PenaltyMode::Literal => m * n / d,
            });
        }
        let total: f64 = s.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Numeric(format!("layer {l} weights do not normalize (sum {total})")));
        }
        rows.push(s.into_iter().map(|x| x / total).collect());
    }
    WeightMatrix::from_rows(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::server::aggregate::tests::scalar_update;

    const DIV: LayerwiseParams = LayerwiseParams {
        tau: 50.0,
        t_k: 10,
        mode: PenaltyMode::Divisor,
    };

    #[test]
    fn penalty_ramp() {
        assert_eq!(penalty_m(1, 100, &[2], 50.0, 10), 1.0);
        assert_eq!(penalty_m(2, 10, &[2], 50.0, 10), 50.0);
        assert_eq!(penalty_m(2, 400, &[2], 50.0, 10), 50.0);
        assert_eq!(penalty_m(2, 5, &[2], 50.0, 10), 25.0);
    }

    #[test]
    fn identical_clean_clients_get_uniform_weights() {
        let g = scalar_update(0, 0.3, 4).params;
        let ups: Vec<_> = (0..4).map(|i| scalar_update(i, 0.3, 4)).collect();
        let w = layerwise_weights(&ups, &g, &[], 3, &DIV).unwrap();
        assert_eq!(w, WeightMatrix::uniform(1, 4));
    }

    #[test]
    fn flagged_client_gets_one_over_tau() {
        let g = scalar_update(0, 0.0, 1).params;
        let ups = [scalar_update(0, 1.0, 10), scalar_update(1, -1.0, 10)];
        let w = layerwise_weights(&ups, &g, &[1], 10, &DIV).unwrap();
        let r = &w.rows()[0];
        assert!((r[1] / r[0] - 1.0 / 50.0).abs() < 1e-12);

        let lit = LayerwiseParams {
            mode: PenaltyMode::Literal,
            ..DIV
        };
        let w = layerwise_weights(&ups, &g, &[1], 10, &lit).unwrap();
        assert!((w.rows()[0][1] / w.rows()[0][0] - 50.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_non_simplex_rows() {
        assert!(WeightMatrix::from_rows(vec![vec![0.5, 0.6]]).is_err());
        assert!(WeightMatrix::from_rows(vec![vec![1.5, -0.5]]).is_err());
        assert!(WeightMatrix::from_rows(vec![vec![0.5, 0.5], vec![1.0]]).is_err());
    }
}
