//! Round orchestration, aggregation rules and noisy-client detection.

mod aggregate;
mod detect;
mod round;
mod weights;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use aggregate::{aggregate_fedavg, aggregate_layerwise, aggregate_trimmed_mean, fedavg_weights, trim_count};
pub use detect::{detect_noisy, reliability_scores, select_s_corr, Detection, DetectionHistory, ReliabilityScores};
pub use round::{prepare_clients, run_experiment, Simulation};
pub use weights::{layerwise_weights, penalty_m, LayerwiseParams, PenaltyMode, WeightMatrix};

fn default_k_pct() -> f64 {
    10.0
}
fn default_mu() -> f64 {
    0.01
}

/// Server-side aggregation rule.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum Aggregator {
    #[serde(rename = "fedavg", alias = "fed_avg")]
    FedAvg,
    /// Coordinate-wise mean after dropping `k_pct` percent of clients from each end.
    #[serde(rename = "trimmed_mean")]
    TrimmedMean {
        #[serde(default = "default_k_pct")]
        k_pct: f64,
    },
    /// FedAvg aggregation with a proximal term of strength `mu` in local training.
    #[serde(rename = "fedprox", alias = "fed_prox")]
    FedProx {
        #[serde(default = "default_mu")]
        mu: f64,
    },
    /// Detection, penalized layer-wise aggregation and label correction.
    #[default]
    #[serde(rename = "fed_ncl", alias = "fedncl")]
    FedNcl,
}

impl Aggregator {
    /// Short stable name used for file columns.
    pub fn name(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Aggregator::FedAvg => write!(f, "fedavg"),
            Aggregator::TrimmedMean { k_pct } => write!(f, "trimmed_mean:{k_pct}"),
            Aggregator::FedProx { mu } => write!(f, "fedprox:{mu}"),
            Aggregator::FedNcl => write!(f, "fed_ncl"),
        }
    }
}

/// Accepts `fedavg`, `trimmed_mean[:K]`, `fedprox[:MU]` and `fed_ncl`.
impl FromStr for Aggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let num = |a: &str| {
            a.parse::<f64>()
                .map_err(|_| Error::config("aggregator", format!("bad numeric argument in {s:?}")))
        };
        let agg = match (name.to_ascii_lowercase().as_str(), arg) {
            ("fedavg" | "fed_avg", None) => Aggregator::FedAvg,
            ("trimmed_mean" | "trimmed", a) => Aggregator::TrimmedMean {
                k_pct: a.map(num).transpose()?.unwrap_or_else(default_k_pct),
            },
            ("fedprox" | "fed_prox", a) => Aggregator::FedProx {
                mu: a.map(num).transpose()?.unwrap_or_else(default_mu),
            },
            ("fed_ncl" | "fedncl", None) => Aggregator::FedNcl,
            _ => return Err(Error::config("aggregator", format!("unknown aggregator {s:?}"))),
        };
        Ok(agg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub aggregator: Aggregator,
    /// Detection threshold in standard deviations.
    pub beta: f64,
    /// Penalty cap.
    pub tau: f64,
    /// Rounds over which the penalty ramps up to `tau`.
    pub t_k: usize,
    /// Flag-frequency quorum for label correction.
    pub alpha: f64,
    /// Round after which label correction runs.
    pub t_corr: usize,
    /// Confidence threshold for relabeling.
    pub eta: f64,
    pub rounds: usize,
    pub num_clients: usize,
    /// FedAvg with `1/C` weights instead of sample-size weights.
    pub unweighted: bool,
    pub penalty_mode: PenaltyMode,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            aggregator: Aggregator::FedNcl,
            beta: 0.6,
            tau: 50.0,
            t_k: 10,
            alpha: 0.6,
            t_corr: 60,
            eta: 0.8,
            rounds: 150,
            num_clients: 20,
            unweighted: false,
            penalty_mode: PenaltyMode::Divisor,
        }
    }
}

impl ServerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || self.beta.is_nan() {
            return Err(Error::config("server.beta (β)", "must be > 0"));
        }
        if !(self.tau >= 1.0 && self.tau.is_finite()) {
            return Err(Error::config("server.tau (τ)", "must be >= 1"));
        }
        if self.t_k < 1 {
            return Err(Error::config("server.t_k", "must be >= 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config("server.alpha (α)", "must be in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::config("server.eta (η)", "must be in [0, 1]"));
        }
        if self.num_clients < 1 {
            return Err(Error::config("server.num_clients", "must be >= 1"));
        }
        if self.rounds > 0 && !(1..=self.rounds).contains(&self.t_corr) {
            return Err(Error::config(
                "server.t_corr",
                format!("must be in 1..={} (the number of rounds)", self.rounds),
            ));
        }
        match self.aggregator {
            Aggregator::TrimmedMean { k_pct } => {
                trim_count(k_pct, self.num_clients).map_err(|e| Error::config("server.aggregator.k_pct", e.to_string()))?;
            }
            Aggregator::FedProx { mu } => {
                if !(mu >= 0.0 && mu.is_finite()) {
                    return Err(Error::config("server.aggregator.mu", "must be >= 0"));
                }
            }
            Aggregator::FedAvg | Aggregator::FedNcl => {}
        }
        Ok(())
    }
}
