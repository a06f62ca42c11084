//! Simulated client: local SGD, data-quality loss and label correction.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{ClientAssignment, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::{cross_entropy, ModelParams, Tensor};
use crate::seed;

/// Which parameters the data-quality loss `h` is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossEvaluator {
    /// The global model the client received at the start of the round.
    #[default]
    Global,
    /// The client's own model after local training.
    Local,
}

/// Which samples a corrected client trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainOn {
    /// Every sample, with corrected labels where correction applied.
    #[default]
    CorrectedAll,
    /// Only the relabeled samples (falls back to all samples when none were relabeled).
    RelabeledOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientConfig {
    pub lr: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    /// FedProx proximal coefficient; 0 disables the term.
    pub prox_mu: f64,
    pub h_on: LossEvaluator,
    pub train_on: TrainOn,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            local_epochs: 10,
            batch_size: 60,
            prox_mu: 0.0,
            h_on: LossEvaluator::Global,
            train_on: TrainOn::CorrectedAll,
        }
    }
}

impl ClientConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("client.lr", "must be > 0"));
        }
        if self.local_epochs < 1 {
            return Err(Error::config("client.local_epochs", "must be >= 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("client.batch_size", "must be >= 1"));
        }
        if !(self.prox_mu >= 0.0 && self.prox_mu.is_finite()) {
            return Err(Error::config("client.prox_mu", "must be >= 0"));
        }
        Ok(())
    }
}

/// What a client sends back after a round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub params: ModelParams,
    /// Summed cross-entropy over the client's training pairs.
    pub h: f64,
    pub n_samples: usize,
    pub round: usize,
}

/// Runs `local_epochs` of shuffled mini-batch SGD starting from `global`.
///
/// Learning rate may be zero here even though [`ClientConfig::validate`] rejects it;
/// that makes the call an identity on the parameters.
pub fn local_train(
    global: &ModelParams,
    assignment: &ClientAssignment,
    dataset: &LabeledDataset,
    config: &ClientConfig,
    round: usize,
    seed: u64,
) -> Result<ClientUpdate> {
    let id = assignment.client_id;
    let wrap = |e: Error| Error::Client {
        client: id,
        source: Box::new(e),
    };
    if assignment.is_empty() {
        return Err(wrap(Error::Domain("client has no samples".into())));
    }
    if config.batch_size == 0 {
        return Err(wrap(Error::Domain("batch size must be >= 1".into())));
    }

    let positions: Vec<usize> = match config.train_on {
        TrainOn::RelabeledOnly if assignment.relabeled.iter().any(|&r| r) => {
            (0..assignment.len()).filter(|&i| assignment.relabeled[i]).collect()
        }
        _ => (0..assignment.len()).collect(),
    };
    let features = dataset.features.select_rows(&assignment.indices);

    let h_global = match config.h_on {
        LossEvaluator::Global => Some(data_quality_loss(global, assignment, dataset).map_err(wrap)?),
        LossEvaluator::Local => None,
    };

    let mut rng = seed::derived_rng(seed, &[seed::stream::LOCAL_TRAIN, id as u64, round as u64]);
    let mut params = global.clone();
    let mut order = positions;
    for _ in 0..config.local_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let x = features.select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| assignment.noisy_labels[i]).collect();
            let (loss, mut grad) = params.loss_and_grad(&x, &y).map_err(wrap)?;
            if !loss.is_finite() {
                return Err(wrap(Error::Numeric(format!("loss diverged in round {round}"))));
            }
            if config.prox_mu > 0.0 {
                for ((g, p), p0) in grad.layers.iter_mut().zip(params.layers()).zip(global.layers()) {
                    for ((gw, w), w0) in g.weights.iter_mut().zip(&p.weights).zip(&p0.weights) {
                        *gw += config.prox_mu * (w - w0);
                    }
                    for ((gb, b), b0) in g.bias.iter_mut().zip(&p.bias).zip(&p0.bias) {
                        *gb += config.prox_mu * (b - b0);
                    }
                }
            }
            params.apply_gradient(&grad, config.lr).map_err(wrap)?;
        }
    }
    params.check_finite().map_err(wrap)?;

    let h = match h_global {
        Some(h) => h,
        None => data_quality_loss(&params, assignment, dataset).map_err(wrap)?,
    };
    Ok(ClientUpdate {
        client_id: id,
        params,
        h,
        n_samples: assignment.len(),
        round,
    })
}

fn client_features(assignment: &ClientAssignment, dataset: &LabeledDataset) -> Tensor {
    dataset.features.select_rows(&assignment.indices)
}

/// Sum (not mean) of per-sample cross-entropy on the client's training labels.
pub fn data_quality_loss(
    eval_params: &ModelParams,
    assignment: &ClientAssignment,
    dataset: &LabeledDataset,
) -> Result<f64> {
    if assignment.is_empty() {
        return Err(Error::Domain("client has no samples".into()));
    }
    let pass = eval_params.forward(&client_features(assignment, dataset))?;
    Ok(assignment
        .noisy_labels
        .iter()
        .enumerate()
        .map(|(i, &y)| cross_entropy(pass.logits.row(i), y))
        .sum())
}

/// Replaces every training label whose global-model confidence is strictly above
/// `eta` with the model's prediction. Returns the corrected assignment and how many
/// samples cleared the threshold.
pub fn apply_label_correction(
    assignment: &ClientAssignment,
    global: &ModelParams,
    dataset: &LabeledDataset,
    eta: f64,
) -> Result<(ClientAssignment, usize)> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Domain(format!("confidence threshold {eta} outside [0, 1]")));
    }
    let mut out = assignment.clone();
    if assignment.is_empty() {
        return Ok((out, 0));
    }
    let (pred, conf) = global.predict_confidences(&client_features(assignment, dataset))?;
    let mut count = 0;
    for (i, (&p, &c)) in pred.iter().zip(&conf).enumerate() {
        if c > eta {
            out.noisy_labels[i] = p;
            out.relabeled[i] = true;
            count += 1;
        }
    }
    Ok((out, count))
}
