//! Round loop: broadcast, parallel local training, detection, aggregation, correction.

use std::time::Instant;

use rayon::prelude::*;

use crate::analysis::{evaluate_accuracy, ClientRecord, CorrectionEvent, RoundMetrics};
use crate::client::{apply_label_correction, local_train, ClientConfig, ClientUpdate};
use crate::config::ExperimentConfig;
use crate::data::{apply_symmetric_noise, sample_client_noise_rates, ClientAssignment, LabeledDataset, NoiseSpec, PartitionKind, PartitionSpec};
use crate::error::{Error, Result};
use crate::nn::ModelParams;

use super::aggregate::{aggregate_fedavg, aggregate_layerwise, aggregate_trimmed_mean, fedavg_weights};
use super::detect::{detect_noisy, reliability_scores, select_s_corr, DetectionHistory};
use super::weights::{layerwise_weights, LayerwiseParams};
use super::{Aggregator, ServerConfig};

/// Partitions `train` over `clients` and injects label noise client by client.
pub fn prepare_clients(
    train: &LabeledDataset,
    partition: PartitionKind,
    noise: &NoiseSpec,
    clients: usize,
    seed: u64,
) -> Result<Vec<ClientAssignment>> {
    let parts = PartitionSpec {
        kind: partition,
        num_clients: clients,
        seed,
    }
    .apply(train)?;
    let rates = sample_client_noise_rates(noise, clients, seed)?;
    parts
        .iter()
        .zip(&rates)
        .map(|(a, &r)| apply_symmetric_noise(a, r, train.num_classes, seed))
        .collect()
}

/// Mutable state of one federated run.
pub struct Simulation<'a> {
    train: &'a LabeledDataset,
    test: &'a LabeledDataset,
    server: ServerConfig,
    client: ClientConfig,
    seed: u64,
    global: ModelParams,
    assignments: Vec<ClientAssignment>,
    history: DetectionHistory,
    last_updates: Vec<ClientUpdate>,
    round: usize,
    pool: rayon::ThreadPool,
}

impl<'a> Simulation<'a> {
    /// `workers == 0` uses every available core. Client ids must equal their
    /// position in `assignments`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        train: &'a LabeledDataset,
        test: &'a LabeledDataset,
        initial: ModelParams,
        assignments: Vec<ClientAssignment>,
        server: ServerConfig,
        client: ClientConfig,
        seed: u64,
        workers: usize,
    ) -> Result<Self> {
        server.validate()?;
        client.validate()?;
        if assignments.is_empty() {
            return Err(Error::config("server.num_clients", "no clients"));
        }
        for (i, a) in assignments.iter().enumerate() {
            if a.client_id != i {
                return Err(Error::Consistency(format!("client at position {i} has id {}", a.client_id)));
            }
            if a.is_empty() {
                return Err(Error::config("partition", format!("client {i} received no samples")));
            }
        }
        if initial.input_dim() != train.dim() || initial.num_classes() != train.num_classes {
            return Err(Error::Shape(format!(
                "model maps {} -> {} but data has {} features and {} classes",
                initial.input_dim(),
                initial.num_classes(),
                train.dim(),
                train.num_classes
            )));
        }
        let mut client = client;
        if let Aggregator::FedProx { mu } = server.aggregator {
            client.prox_mu = mu;
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::State(format!("cannot start worker pool: {e}")))?;
        Ok(Self {
            train,
            test,
            server,
            client,
            seed,
            global: initial,
            assignments,
            history: DetectionHistory::new(),
            last_updates: Vec::new(),
            round: 0,
            pool,
        })
    }

    pub fn global(&self) -> &ModelParams {
        &self.global
    }

    pub fn assignments(&self) -> &[ClientAssignment] {
        &self.assignments
    }

    pub fn history(&self) -> &DetectionHistory {
        &self.history
    }

    /// Client models from the most recent round, in client order.
    pub fn last_updates(&self) -> &[ClientUpdate] {
        &self.last_updates
    }

    /// Rounds completed so far.
    pub fn round(&self) -> usize {
        self.round
    }

    fn train_clients(&self, round: usize) -> Result<Vec<ClientUpdate>> {
        let results: Vec<Result<ClientUpdate>> = self.pool.install(|| {
            self.assignments
                .par_iter()
                .map(|a| local_train(&self.global, a, self.train, &self.client, round, self.seed))
                .collect()
        });
        results.into_iter().collect()
    }

    /// Runs the next round and returns its metrics.
    pub fn run_round(&mut self) -> Result<RoundMetrics> {
        let t = self.round + 1;
        let started = Instant::now();
        let updates = self.train_clients(t)?;

        let scores = reliability_scores(&updates, &self.global, t)?;
        let detection = detect_noisy(&scores, self.server.beta);
        self.history.record(t, detection.clone());

        let layers = self.global.num_layers();
        let (next, weights) = match self.server.aggregator {
            Aggregator::FedAvg | Aggregator::FedProx { .. } => {
                let w = fedavg_weights(&updates, self.server.unweighted);
                (aggregate_fedavg(&updates, self.server.unweighted)?, vec![w; layers])
            }
            Aggregator::TrimmedMean { k_pct } => (aggregate_trimmed_mean(&updates, k_pct)?, Vec::new()),
            Aggregator::FedNcl => {
                let params = LayerwiseParams {
                    tau: self.server.tau,
                    t_k: self.server.t_k,
                    mode: self.server.penalty_mode,
                };
                let w = layerwise_weights(&updates, &self.global, &detection.noisy, t, &params)?;
                (aggregate_layerwise(&updates, &w)?, w.into_rows())
            }
        };
        next.check_finite()?;

        let mut corrections = Vec::new();
        if self.server.aggregator == Aggregator::FedNcl && t == self.server.t_corr {
            for c in select_s_corr(&self.history, self.server.alpha, self.server.t_corr)? {
                let (fixed, relabeled) = apply_label_correction(&self.assignments[c], &next, self.train, self.server.eta)?;
                self.assignments[c] = fixed;
                corrections.push(CorrectionEvent { client: c, relabeled });
            }
        }

        let accuracy = evaluate_accuracy(&next, self.test)?;
        let clients = updates
            .iter()
            .enumerate()
            .map(|(i, u)| ClientRecord {
                client: u.client_id,
                n_samples: u.n_samples,
                noise_rate: self.assignments[u.client_id].noise_rate,
                h: u.h,
                divergence: scores.divergences[i],
                q: scores.scores[i],
                flagged: detection.is_noisy(u.client_id),
            })
            .collect();

        self.global = next;
        self.last_updates = updates;
        self.round = t;
        Ok(RoundMetrics {
            round: t,
            accuracy,
            clients,
            weights,
            corrections,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        })
    }

    /// Runs the remaining rounds up to the configured total.
    pub fn run(&mut self) -> Result<Vec<RoundMetrics>> {
        let mut out = Vec::with_capacity(self.server.rounds.saturating_sub(self.round));
        while self.round < self.server.rounds {
            out.push(self.run_round()?);
        }
        Ok(out)
    }
}

impl ExperimentConfig {
    /// Initial model, client data and a ready-to-run simulation for `train`/`test`.
    pub fn simulation<'a>(&self, train: &'a LabeledDataset, test: &'a LabeledDataset) -> Result<Simulation<'a>> {
        self.validate()?;
        let specs = self.layer_specs(train.dim(), train.num_classes);
        let initial = ModelParams::init(&specs, self.seed)?;
        let clients = prepare_clients(train, self.partition, &self.noise, self.server.num_clients, self.seed)?;
        Simulation::new(
            train,
            test,
            initial,
            clients,
            self.server,
            self.client,
            self.seed,
            self.workers,
        )
    }
}

/// Builds partitions and noise from `config`, then runs every round.
pub fn run_experiment(
    config: &ExperimentConfig,
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<Vec<RoundMetrics>> {
    config.simulation(train, test)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DatasetConfig;

    fn small(aggregator: Aggregator, noise: NoiseSpec, rounds: usize) -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetConfig::Synthetic {
                num_classes: 3,
                per_class: 40,
                test_per_class: 20,
                dim: 4,
                spread: 0.3,
            },
            subset_size: 0,
            hidden_layers: vec![6],
            noise,
            client: ClientConfig {
                lr: 0.1,
                local_epochs: 1,
                batch_size: 10,
                ..Default::default()
            },
            server: ServerConfig {
                aggregator,
                rounds,
                t_corr: rounds.max(1),
                num_clients: 4,
                ..Default::default()
            },
            workers: 1,
            ..Default::default()
        }
    }

    #[test]
    fn zero_rounds_is_empty() {
        let cfg = small(Aggregator::FedNcl, NoiseSpec::None, 0);
        let (tr, te) = cfg.load_data().unwrap();
        let mut sim = cfg.simulation(&tr, &te).unwrap();
        let before = sim.global().clone();
        assert!(sim.run().unwrap().is_empty());
        assert_eq!(sim.global(), &before);
    }

    #[test]
    fn deterministic_and_worker_independent() {
        let mut cfg = small(Aggregator::FedNcl, NoiseSpec::Bernoulli { p: 0.5, within_rate: 1.0 }, 3);
        let (tr, te) = cfg.load_data().unwrap();
        let a = run_experiment(&cfg, &tr, &te).unwrap();
        cfg.workers = 3;
        let b = run_experiment(&cfg, &tr, &te).unwrap();
        assert_eq!(a.len(), 3);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.accuracy, y.accuracy);
            assert_eq!(x.clients, y.clients);
            assert_eq!(x.weights, y.weights);
        }
    }

    #[test]
    fn single_client_every_rule_returns_its_model() {
        for agg in [
            Aggregator::FedAvg,
            Aggregator::FedNcl,
            Aggregator::TrimmedMean { k_pct: 10.0 },
            Aggregator::FedProx { mu: 0.01 },
        ] {
            let mut cfg = small(agg, NoiseSpec::None, 1);
            cfg.server.num_clients = 1;
            let (tr, te) = cfg.load_data().unwrap();
            let mut sim = cfg.simulation(&tr, &te).unwrap();
            sim.run_round().unwrap();
            assert_eq!(sim.global(), &sim.last_updates()[0].params, "{agg}");
        }
    }

    #[test]
    fn correction_fires_once_at_t_corr() {
        let mut cfg = small(Aggregator::FedNcl, NoiseSpec::Bernoulli { p: 0.5, within_rate: 1.0 }, 4);
        cfg.server.t_corr = 2;
        cfg.server.alpha = 0.01;
        let (tr, te) = cfg.load_data().unwrap();
        let m = run_experiment(&cfg, &tr, &te).unwrap();
        for r in &m {
            if r.round != 2 {
                assert!(r.corrections.is_empty());
            }
        }
        let flagged_twice: Vec<usize> = (0..4)
            .filter(|&c| m[..2].iter().all(|r| r.clients[c].flagged))
            .collect();
        let corrected: Vec<usize> = m[1].corrections.iter().map(|e| e.client).collect();
        let flagged_any: Vec<usize> = (0..4)
            .filter(|&c| m[..2].iter().any(|r| r.clients[c].flagged))
            .collect();
        // alpha * T_corr = 0.02, so one flag in the first two rounds qualifies.
        assert_eq!(corrected, flagged_any);
        assert!(flagged_twice.iter().all(|c| corrected.contains(c)));
    }

    #[test]
    fn layerwise_rows_are_simplex() {
        let cfg = small(Aggregator::FedNcl, NoiseSpec::Bernoulli { p: 0.5, within_rate: 1.0 }, 2);
        let (tr, te) = cfg.load_data().unwrap();
        for r in run_experiment(&cfg, &tr, &te).unwrap() {
            assert_eq!(r.weights.len(), 2);
            for row in &r.weights {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn empty_client_is_config_error() {
        let mut cfg = small(Aggregator::FedAvg, NoiseSpec::None, 1);
        cfg.partition = PartitionKind::ClassSkew {
            p_class: 0.3,
            alpha_dir: 10.0,
        };
        cfg.server.num_clients = 30;
        let (tr, te) = cfg.load_data().unwrap();
        match cfg.simulation(&tr, &te) {
            Err(e) => assert!(e.is_config(), "{e}"),
            Ok(_) => panic!("expected an empty client"),
        }
    }
}
