use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{param_sq_distance, ModelParams};

/// Fraction of samples whose argmax prediction equals the label.
pub fn evaluate_accuracy(params: &ModelParams, test: &LabeledDataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Domain("empty test set".into()));
    }
    let (pred, _) = params.predict_confidences(&test.features)?;
    let hits = pred.iter().zip(&test.labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / test.len() as f64)
}

/// `‖Θ_G − Θ_c‖²` for each client model.
pub fn weight_divergence(global: &ModelParams, clients: &[ModelParams]) -> Result<Vec<f64>> {
    clients.iter().map(|c| param_sq_distance(global, c)).collect()
}

/// Arithmetic mean of the last `k` values (all of them if fewer than `k`).
pub fn mean_last(values: &[f64], k: usize) -> f64 {
    let tail = &values[values.len().saturating_sub(k)..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().sum::<f64>() / tail.len() as f64
}

/// Population standard deviation of the last `k` values.
pub fn std_last(values: &[f64], k: usize) -> f64 {
    let tail = &values[values.len().saturating_sub(k)..];
    let m = mean_last(values, k);
    (tail.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / tail.len() as f64).sqrt()
}
