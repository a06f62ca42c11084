//! Linear centered kernel alignment between layer representations.

use crate::error::{Error, Result};
use crate::nn::{gemm, ModelParams, Tensor};

fn centered(x: &Tensor) -> Vec<f64> {
    let (n, p) = (x.rows(), x.cols());
    let mut means = vec![0.0; p];
    for i in 0..n {
        for (m, v) in means.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n as f64);
    let mut out = x.values().to_vec();
    for row in out.chunks_exact_mut(p) {
        for (v, m) in row.iter_mut().zip(&means) {
            *v -= m;
        }
    }
    out
}

/// `‖Aᵀ B‖_F²` for row-major `n x p` and `n x q` matrices.
fn cross_sq_norm(a: &[f64], p: usize, b: &[f64], q: usize, n: usize) -> f64 {
    let mut c = vec![0.0; p * q];
    gemm::at_b(p, n, q, a, b, &mut c);
    c.iter().map(|v| v * v).sum()
}

/// Linear CKA with column centering:
/// `‖Yᶜᵀ Xᶜ‖²_F / (‖Xᶜᵀ Xᶜ‖_F · ‖Yᶜᵀ Yᶜ‖_F)`.
pub fn linear_cka(x: &Tensor, y: &Tensor) -> Result<f64> {
    if x.shape().len() != 2 || y.shape().len() != 2 || x.rows() != y.rows() {
        return Err(Error::Shape(format!(
            "CKA inputs must be matrices with equal rows, got {:?} and {:?}",
            x.shape(),
            y.shape()
        )));
    }
    let n = x.rows();
    if n < 2 {
        return Err(Error::Degenerate("CKA needs at least two samples".into()));
    }
    let (p, q) = (x.cols(), y.cols());
    let xc = centered(x);
    let yc = centered(y);
    let xx = cross_sq_norm(&xc, p, &xc, p, n).sqrt();
    let yy = cross_sq_norm(&yc, q, &yc, q, n).sqrt();
    if !(xx > 0.0) || !(yy > 0.0) {
        return Err(Error::Degenerate("a representation has zero variance".into()));
    }
    let xy = cross_sq_norm(&xc, p, &yc, q, n);
    Ok((xy / (xx * yy)).clamp(0.0, 1.0))
}

/// CKA matrices of one layer across all models.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCka {
    pub layer: usize,
    /// Symmetric `M x M`, models in report order (clients, then the global model).
    pub matrix: Vec<Vec<f64>>,
    /// Mean CKA between the global model and the listed noisy clients.
    pub mean_global_noisy: Option<f64>,
    /// Mean CKA between the global model and the remaining clients.
    pub mean_global_clean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CkaReport {
    pub probe_id: String,
    pub model_labels: Vec<String>,
    pub layers: Vec<LayerCka>,
}

/// Runs every model on the shared probe batch and compares post-activation
/// outputs layer by layer. `models` holds the clients followed by the global model;
/// `noisy_ids` index into the clients.
pub fn cka_layer_report(
    models: &[ModelParams],
    probe: &Tensor,
    noisy_ids: &[usize],
    probe_id: &str,
) -> Result<CkaReport> {
    if models.len() < 2 {
        return Err(Error::Domain("CKA report needs at least two models".into()));
    }
    if probe.rows() == 0 {
        return Err(Error::Domain("probe set is empty".into()));
    }
    for m in &models[1..] {
        models[0].ensure_same_shape(m)?;
    }
    let passes = models
        .iter()
        .map(|m| m.forward(probe))
        .collect::<Result<Vec<_>>>()?;
    let count = models.len();
    let global = count - 1;
    let mut layers = Vec::with_capacity(models[0].num_layers());
    for l in 0..models[0].num_layers() {
        let mut matrix = vec![vec![0.0; count]; count];
        for i in 0..count {
            matrix[i][i] = 1.0;
            for j in i + 1..count {
                let v = linear_cka(&passes[i].activations[l], &passes[j].activations[l])?;
                matrix[i][j] = v;
                matrix[j][i] = v;
            }
        }
        let mean_of = |ids: &mut dyn Iterator<Item = usize>| {
            let vals: Vec<f64> = ids.map(|c| matrix[global][c]).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        let mean_global_noisy = mean_of(&mut (0..global).filter(|c| noisy_ids.contains(c)));
        let mean_global_clean = mean_of(&mut (0..global).filter(|c| !noisy_ids.contains(c)));
        layers.push(LayerCka {
            layer: l,
            matrix,
            mean_global_noisy,
            mean_global_clean,
        });
    }
    let mut model_labels: Vec<String> = (0..global).map(|c| format!("client_{c}")).collect();
    model_labels.push("global".into());
    Ok(CkaReport {
        probe_id: probe_id.to_string(),
        model_labels,
        layers,
    })
}
