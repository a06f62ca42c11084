//! Splitting a dataset across clients.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, LogNormal};
use serde::{Deserialize, Serialize};

use super::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::seed;

const PRESENCE_RETRIES: usize = 100;

/// One client's share of the training data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientAssignment {
    pub client_id: usize,
    /// Indices into the parent dataset.
    pub indices: Vec<usize>,
    pub true_labels: Vec<usize>,
    /// Labels the client trains on.
    pub noisy_labels: Vec<usize>,
    pub noise_rate: f64,
    /// Samples whose label was replaced by label correction.
    pub relabeled: Vec<bool>,
}

impl ClientAssignment {
    pub fn new(client_id: usize, indices: Vec<usize>, dataset: &LabeledDataset) -> Self {
        let true_labels: Vec<usize> = indices.iter().map(|&i| dataset.labels[i]).collect();
        Self {
            client_id,
            relabeled: vec![false; indices.len()],
            noisy_labels: true_labels.clone(),
            true_labels,
            indices,
            noise_rate: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Fraction of training labels that disagree with the ground truth.
    pub fn flip_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let wrong = self
            .true_labels
            .iter()
            .zip(&self.noisy_labels)
            .filter(|(t, n)| t != n)
            .count();
        wrong as f64 / self.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionKind {
    Iid,
    ClassSkew {
        #[serde(default = "default_p_class")]
        p_class: f64,
        #[serde(default = "default_alpha_dir")]
        alpha_dir: f64,
    },
    QuantitySkew {
        #[serde(default = "default_sigma_log")]
        sigma_log: f64,
    },
}

fn default_p_class() -> f64 {
    0.7
}
fn default_alpha_dir() -> f64 {
    10.0
}
fn default_sigma_log() -> f64 {
    0.3
}

impl Default for PartitionKind {
    fn default() -> Self {
        PartitionKind::Iid
    }
}

impl PartitionKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PartitionKind::Iid => Ok(()),
            PartitionKind::ClassSkew { p_class, alpha_dir } => {
                if !(p_class > 0.0 && p_class <= 1.0) {
                    return Err(Error::config("partition.p_class", "must be in (0, 1]"));
                }
                if !(alpha_dir > 0.0 && alpha_dir.is_finite()) {
                    return Err(Error::config("partition.alpha_dir", "must be > 0"));
                }
                Ok(())
            }
            PartitionKind::QuantitySkew { sigma_log } => {
                if !(sigma_log >= 0.0 && sigma_log.is_finite()) {
                    return Err(Error::config("partition.sigma_log", "must be >= 0"));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionSpec {
    pub kind: PartitionKind,
    pub num_clients: usize,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn apply(&self, dataset: &LabeledDataset) -> Result<Vec<ClientAssignment>> {
        self.kind.validate()?;
        match self.kind {
            PartitionKind::Iid => partition_iid(dataset, self.num_clients, self.seed),
            PartitionKind::ClassSkew { p_class, alpha_dir } => {
                partition_class_skew(dataset, self.num_clients, p_class, alpha_dir, self.seed)
            }
            PartitionKind::QuantitySkew { sigma_log } => {
                partition_quantity_skew(dataset, self.num_clients, sigma_log, self.seed)
            }
        }
    }
}

fn check_counts(n: usize, clients: usize) -> Result<()> {
    if clients == 0 {
        return Err(Error::Domain("need at least one client".into()));
    }
    if clients > n {
        return Err(Error::Domain(format!("{clients} clients but only {n} samples")));
    }
    Ok(())
}

fn split_by_sizes(perm: &[usize], sizes: &[usize], dataset: &LabeledDataset) -> Vec<ClientAssignment> {
    let mut off = 0;
    sizes
        .iter()
        .enumerate()
        .map(|(c, &s)| {
            let idx = perm[off..off + s].to_vec();
            off += s;
            ClientAssignment::new(c, idx, dataset)
        })
        .collect()
}

/// Random permutation cut into `clients` shards whose sizes differ by at most one.
pub fn partition_iid(dataset: &LabeledDataset, clients: usize, seed: u64) -> Result<Vec<ClientAssignment>> {
    let n = dataset.len();
    check_counts(n, clients)?;
    let mut rng = seed::derived_rng(seed, &[seed::stream::PARTITION]);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let sizes: Vec<usize> = (0..clients)
        .map(|c| n / clients + usize::from(c < n % clients))
        .collect();
    Ok(split_by_sizes(&perm, &sizes, dataset))
}

/// Draws Dirichlet(alpha, ..., alpha) proportions of length `k` via normalized gammas.
fn dirichlet<R: Rng>(k: usize, alpha: f64, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha > 0");
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.into_iter().map(|g| g / total).collect()
    } else {
        // every gamma underflowed (tiny alpha): put all mass on one entry
        let mut p = vec![0.0; k];
        p[rng.random_range(0..k)] = 1.0;
        p
    }
}

/// Class-distribution skew: each class is held by a Bernoulli(`p_class`) subset of
/// clients and divided among them with Dirichlet(`alpha_dir`) proportions.
pub fn partition_class_skew(
    dataset: &LabeledDataset,
    clients: usize,
    p_class: f64,
    alpha_dir: f64,
    seed: u64,
) -> Result<Vec<ClientAssignment>> {
    PartitionKind::ClassSkew { p_class, alpha_dir }.validate()?;
    check_counts(dataset.len(), clients)?;
    let k = dataset.num_classes;
    let mut rng = seed::derived_rng(seed, &[seed::stream::PARTITION]);

    let mut presence = None;
    for _ in 0..PRESENCE_RETRIES {
        let m: Vec<Vec<bool>> = (0..k)
            .map(|_| (0..clients).map(|_| rng.random_bool(p_class)).collect())
            .collect();
        if m.iter().all(|row| row.iter().any(|&b| b)) {
            presence = Some(m);
            break;
        }
    }
    let presence = presence.ok_or_else(|| {
        Error::config(
            "partition.p_class",
            format!("no class-presence draw covered every class in {PRESENCE_RETRIES} attempts"),
        )
    })?;

    let mut per_client: Vec<Vec<usize>> = vec![Vec::new(); clients];
    for class in 0..k {
        let mut members: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let holders: Vec<usize> = (0..clients).filter(|&c| presence[class][c]).collect();
        let props = dirichlet(holders.len(), alpha_dir, &mut rng);
        let n = members.len();
        let mut cum = 0.0;
        let mut start = 0;
        for (j, (&c, p)) in holders.iter().zip(&props).enumerate() {
            cum += p;
            let end = if j + 1 == holders.len() {
                n
            } else {
                ((cum * n as f64).round() as usize).clamp(start, n)
            };
            per_client[c].extend_from_slice(&members[start..end]);
            start = end;
        }
    }
    Ok(per_client
        .into_iter()
        .enumerate()
        .map(|(c, idx)| ClientAssignment::new(c, idx, dataset))
        .collect())
}

/// Quantity skew: client sizes proportional to LogNormal(0, `sigma_log`) draws,
/// each at least one, summing to N; composition within a client is IID.
pub fn partition_quantity_skew(
    dataset: &LabeledDataset,
    clients: usize,
    sigma_log: f64,
    seed: u64,
) -> Result<Vec<ClientAssignment>> {
    PartitionKind::QuantitySkew { sigma_log }.validate()?;
    let n = dataset.len();
    check_counts(n, clients)?;
    let mut rng = seed::derived_rng(seed, &[seed::stream::PARTITION]);
    let weights: Vec<f64> = if sigma_log == 0.0 {
        vec![1.0; clients]
    } else {
        let ln = LogNormal::new(0.0, sigma_log).expect("valid lognormal");
        (0..clients).map(|_| ln.sample(&mut rng)).collect()
    };
    let sizes = apportion(&weights, n - clients)
        .into_iter()
        .map(|s| s + 1)
        .collect::<Vec<_>>();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    Ok(split_by_sizes(&perm, &sizes, dataset))
}

/// Largest-remainder apportionment of `total` items proportionally to `weights`.
fn apportion(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = total - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    sizes
}
