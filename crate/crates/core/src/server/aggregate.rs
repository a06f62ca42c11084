//! Aggregation rules. Each coordinate whose client values all agree is returned
//! unchanged, so aggregating identical models is exact for every rule.

use crate::client::ClientUpdate;
use crate::error::{Error, Result};
use crate::nn::ModelParams;

use super::weights::WeightMatrix;

fn check_updates(updates: &[ClientUpdate]) -> Result<()> {
    let first = updates
        .first()
        .ok_or_else(|| Error::Domain("cannot aggregate zero updates".into()))?;
    for u in &updates[1..] {
        first.params.ensure_same_shape(&u.params)?;
    }
    Ok(())
}

/// `Σ_c w_c x_c` for one coordinate gathered across clients.
#[inline]
fn combine(values: &[f64], weights: &[f64]) -> f64 {
    let v0 = values[0];
    if values.iter().all(|&v| v == v0) {
        return v0;
    }
    values.iter().zip(weights).map(|(v, w)| v * w).sum()
}

/// Builds a model whose layer `l` is `combine(client values, weights[l])` per coordinate.
fn combine_per_layer(updates: &[ClientUpdate], layer_weights: &[Vec<f64>]) -> ModelParams {
    let mut out = updates[0].params.clone();
    let mut buf = vec![0.0; updates.len()];
    for (l, layer) in out.layers_mut().iter_mut().enumerate() {
        let w = &layer_weights[l];
        for j in 0..layer.weights.len() {
            for (b, u) in buf.iter_mut().zip(updates) {
                *b = u.params.layers()[l].weights[j];
            }
            layer.weights[j] = combine(&buf, w);
        }
        for j in 0..layer.bias.len() {
            for (b, u) in buf.iter_mut().zip(updates) {
                *b = u.params.layers()[l].bias[j];
            }
            layer.bias[j] = combine(&buf, w);
        }
    }
    out
}

/// Client weights used by FedAvg: `n_c / Σ n` or `1 / C` when `unweighted`.
pub fn fedavg_weights(updates: &[ClientUpdate], unweighted: bool) -> Vec<f64> {
    let c = updates.len() as f64;
    let total: usize = updates.iter().map(|u| u.n_samples).sum();
    updates
        .iter()
        .map(|u| {
            if unweighted || total == 0 {
                1.0 / c
            } else {
                u.n_samples as f64 / total as f64
            }
        })
        .collect()
}

/// Coordinate-wise weighted mean by sample count (or plain mean when `unweighted`).
pub fn aggregate_fedavg(updates: &[ClientUpdate], unweighted: bool) -> Result<ModelParams> {
    check_updates(updates)?;
    let w = fedavg_weights(updates, unweighted);
    let layers = updates[0].params.num_layers();
    Ok(combine_per_layer(updates, &vec![w; layers]))
}

/// Number of values dropped from each end for `k_pct` percent of `clients`.
pub fn trim_count(k_pct: f64, clients: usize) -> Result<usize> {
    if !(0.0..50.0).contains(&k_pct) {
        return Err(Error::Domain(format!("trim percentage {k_pct} outside [0, 50)")));
    }
    let m = (k_pct / 100.0 * clients as f64).floor() as usize;
    if 2 * m >= clients {
        return Err(Error::Domain(format!(
            "trimming {m} from each end leaves nothing of {clients} clients"
        )));
    }
    Ok(m)
}

/// Per coordinate: sort the client values, drop `floor(k_pct/100 * C)` from each
/// end and average what remains.
pub fn aggregate_trimmed_mean(updates: &[ClientUpdate], k_pct: f64) -> Result<ModelParams> {
    check_updates(updates)?;
    let c = updates.len();
    let m = trim_count(k_pct, c)?;
    let mut out = updates[0].params.clone();
    let mut buf = vec![0.0; c];
    let trimmed = |buf: &mut [f64]| -> f64 {
        let v0 = buf[0];
        if buf.iter().all(|&v| v == v0) {
            return v0;
        }
        buf.sort_by(f64::total_cmp);
        let kept = &buf[m..c - m];
        kept.iter().sum::<f64>() / kept.len() as f64
    };
    for (l, layer) in out.layers_mut().iter_mut().enumerate() {
        for j in 0..layer.weights.len() {
            for (b, u) in buf.iter_mut().zip(updates) {
                *b = u.params.layers()[l].weights[j];
            }
            layer.weights[j] = trimmed(&mut buf);
        }
        for j in 0..layer.bias.len() {
            for (b, u) in buf.iter_mut().zip(updates) {
                *b = u.params.layers()[l].bias[j];
            }
            layer.bias[j] = trimmed(&mut buf);
        }
    }
    Ok(out)
}

/// Layer `l` of the result is `Σ_c W[l][c] · (layer l of client c)`.
pub fn aggregate_layerwise(updates: &[ClientUpdate], weights: &WeightMatrix) -> Result<ModelParams> {
    check_updates(updates)?;
    let (l, c) = weights.dims();
    if l != updates[0].params.num_layers() || c != updates.len() {
        return Err(Error::Shape(format!(
            "weight matrix is {l}x{c} but there are {} layers and {} clients",
            updates[0].params.num_layers(),
            updates.len()
        )));
    }
    Ok(combine_per_layer(updates, weights.rows()))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::nn::{Activation, DenseLayer, LayerSpec};

    pub(crate) fn scalar_update(id: usize, v: f64, n: usize) -> ClientUpdate {
        ClientUpdate {
            client_id: id,
            params: ModelParams::from_layers(vec![DenseLayer {
                spec: LayerSpec::new(1, 1, Activation::Identity),
                weights: vec![v],
                bias: vec![v],
            }])
            .unwrap(),
            h: 0.0,
            n_samples: n,
            round: 1,
        }
    }

    #[test]
    fn fedavg_hand_cases() {
        let ups = [scalar_update(0, 0.0, 5), scalar_update(1, 2.0, 5)];
        assert_eq!(aggregate_fedavg(&ups, false).unwrap().layers()[0].weights, vec![1.0]);

        let ups = [scalar_update(0, 0.0, 1), scalar_update(1, 0.0, 1), scalar_update(2, 4.0, 2)];
        let w = aggregate_fedavg(&ups, false).unwrap().layers()[0].weights[0];
        assert!((w - 2.0).abs() < 1e-15);
        let u = aggregate_fedavg(&ups, true).unwrap().layers()[0].weights[0];
        assert!((u - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn fedavg_empty() {
        assert!(matches!(aggregate_fedavg(&[], false), Err(Error::Domain(_))));
    }

    #[test]
    fn identical_updates_conserved_exactly() {
        let ups: Vec<_> = (0..3).map(|i| scalar_update(i, 0.1, 7 + i)).collect();
        let expect = &ups[0].params;
        assert_eq!(&aggregate_fedavg(&ups, false).unwrap(), expect);
        assert_eq!(&aggregate_trimmed_mean(&ups, 34.0).unwrap(), expect);
        let w = WeightMatrix::from_rows(vec![vec![0.2, 0.3, 0.5]]).unwrap();
        assert_eq!(&aggregate_layerwise(&ups, &w).unwrap(), expect);
    }

    #[test]
    fn trimmed_hand_sort() {
        let ups: Vec<_> = [5.0, 1.0, 4.0, 2.0, 3.0]
            .iter()
            .enumerate()
            .map(|(i, &v)| scalar_update(i, v, 1))
            .collect();
        assert_eq!(aggregate_trimmed_mean(&ups, 20.0).unwrap().layers()[0].weights, vec![3.0]);
    }

    #[test]
    fn trim_bounds() {
        assert_eq!(trim_count(20.0, 5).unwrap(), 1);
        assert_eq!(trim_count(0.0, 1).unwrap(), 0);
        assert!(trim_count(50.0, 10).is_err());
        assert!(trim_count(49.0, 2).is_ok());
        assert!(trim_count(49.0, 100).is_ok());
    }

    #[test]
    fn single_client_is_returned_by_every_rule() {
        let ups = [scalar_update(0, 0.7, 3)];
        let w = WeightMatrix::from_rows(vec![vec![1.0]]).unwrap();
        assert_eq!(aggregate_fedavg(&ups, false).unwrap(), ups[0].params);
        assert_eq!(aggregate_trimmed_mean(&ups, 10.0).unwrap(), ups[0].params);
        assert_eq!(aggregate_layerwise(&ups, &w).unwrap(), ups[0].params);
    }

    #[test]
    fn layerwise_shape_mismatch() {
        let ups = [scalar_update(0, 0.0, 1), scalar_update(1, 1.0, 1)];
        let w = WeightMatrix::from_rows(vec![vec![1.0]]).unwrap();
        assert!(matches!(aggregate_layerwise(&ups, &w), Err(Error::Shape(_))));
    }
}
