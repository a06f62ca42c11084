//! Experiment configuration: JSON in, validated, echoed back out.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::client::ClientConfig;
use crate::data::{load_idx, make_synthetic, LabeledDataset, NoiseSpec, PartitionKind};
use crate::error::{Error, Result};
use crate::nn::LayerSpec;
use crate::seed;
use crate::server::ServerConfig;

fn default_mnist_dir() -> PathBuf {
    PathBuf::from("data/mnist")
}

/// Where samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// A directory holding the four standard IDX files (optionally gzipped).
    Mnist {
        #[serde(default = "default_mnist_dir")]
        dir: PathBuf,
    },
    /// Gaussian class blobs; train and test share the class centers.
    Synthetic {
        #[serde(default = "default_classes")]
        num_classes: usize,
        #[serde(default = "default_per_class")]
        per_class: usize,
        #[serde(default = "default_test_per_class")]
        test_per_class: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_spread")]
        spread: f64,
    },
}

fn default_classes() -> usize {
    10
}
fn default_per_class() -> usize {
    200
}
fn default_test_per_class() -> usize {
    50
}
fn default_dim() -> usize {
    20
}
fn default_spread() -> f64 {
    0.5
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Mnist { dir: default_mnist_dir() }
    }
}

const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// Finds `name`, `name.gz`, or the `test-` spelling of the test files inside `dir`.
fn find_idx(dir: &Path, name: &str) -> Result<PathBuf> {
    let mut tried = Vec::new();
    let alt = name.replace("t10k-", "test-");
    for base in [name, alt.as_str()] {
        for cand in [base.to_string(), format!("{base}.gz")] {
            let p = dir.join(&cand);
            if p.is_file() {
                return Ok(p);
            }
            tried.push(p.display().to_string());
        }
    }
    Err(Error::Format {
        path: dir.to_path_buf(),
        msg: format!("IDX file not found; tried {}", tried.join(", ")),
    })
}

/// Full experiment description. Omitted fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    /// Training samples drawn from the dataset; 0 keeps all of them.
    pub subset_size: usize,
    /// Test samples kept; 0 keeps all of them.
    pub test_size: usize,
    pub hidden_layers: Vec<usize>,
    pub partition: PartitionKind,
    pub noise: NoiseSpec,
    pub client: ClientConfig,
    pub server: ServerConfig,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub save_checkpoints: bool,
    pub checkpoint_every: usize,
    /// Worker threads for client training; 0 uses every available core.
    pub workers: usize,
    pub cka_probe_size: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            subset_size: 2000,
            test_size: 0,
            hidden_layers: vec![64, 32],
            partition: PartitionKind::Iid,
            noise: NoiseSpec::None,
            client: ClientConfig::default(),
            server: ServerConfig::default(),
            seed: 0,
            out_dir: PathBuf::from("out"),
            save_checkpoints: false,
            checkpoint_every: 10,
            workers: 0,
            cka_probe_size: 512,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        match &self.dataset {
            DatasetConfig::Mnist { .. } => {}
            DatasetConfig::Synthetic {
                num_classes,
                per_class,
                test_per_class,
                dim,
                spread,
            } => {
                if *num_classes < 2 {
                    return Err(Error::config("dataset.num_classes", "must be >= 2"));
                }
                if *per_class < 1 || *test_per_class < 1 {
                    return Err(Error::config("dataset.per_class", "must be >= 1"));
                }
                if *dim < 1 {
                    return Err(Error::config("dataset.dim", "must be >= 1"));
                }
                if !(*spread >= 0.0 && spread.is_finite()) {
                    return Err(Error::config("dataset.spread", "must be >= 0"));
                }
            }
        }
        if self.hidden_layers.contains(&0) {
            return Err(Error::config("hidden_layers", "widths must be >= 1"));
        }
        if self.subset_size != 0 && self.subset_size < self.server.num_clients {
            return Err(Error::config("subset_size", "fewer samples than clients"));
        }
        if self.checkpoint_every < 1 {
            return Err(Error::config("checkpoint_every", "must be >= 1"));
        }
        if self.cka_probe_size < 2 {
            return Err(Error::config("cka_probe_size", "must be >= 2"));
        }
        self.partition.validate()?;
        self.noise.validate()?;
        self.client.validate()?;
        self.server.validate()
    }

    /// Interprets relative dataset paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let DatasetConfig::Mnist { dir } = &mut self.dataset {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
    }

    /// Loads (or synthesizes) the training and test sets, then applies the subset sizes.
    pub fn load_data(&self) -> Result<(LabeledDataset, LabeledDataset)> {
        let (train, test) = match &self.dataset {
            DatasetConfig::Mnist { dir } => {
                let p: Vec<PathBuf> = MNIST_FILES.iter().map(|f| find_idx(dir, f)).collect::<Result<_>>()?;
                let train = load_idx(&p[0], &p[1])?;
                let test = load_idx(&p[2], &p[3])?;
                if train.dim() != test.dim() {
                    return Err(Error::Consistency(format!(
                        "train images have {} pixels, test images {}",
                        train.dim(),
                        test.dim()
                    )));
                }
                let k = train.num_classes.max(test.num_classes);
                (
                    LabeledDataset::new(train.features, train.labels, k)?,
                    LabeledDataset::new(test.features, test.labels, k)?,
                )
            }
            &DatasetConfig::Synthetic {
                num_classes,
                per_class,
                test_per_class,
                dim,
                spread,
            } => {
                let all = make_synthetic(num_classes, per_class + test_per_class, dim, spread, self.seed)?;
                let per = per_class + test_per_class;
                let (tr, te): (Vec<usize>, Vec<usize>) = (0..all.len()).partition(|i| i % per < per_class);
                (all.subset(&tr)?, all.subset(&te)?)
            }
        };
        let train = self.take_subset(train, self.subset_size, 0)?;
        let test = self.take_subset(test, self.test_size, 1)?;
        Ok((train, test))
    }

    fn take_subset(&self, ds: LabeledDataset, size: usize, which: u64) -> Result<LabeledDataset> {
        if size == 0 || size >= ds.len() {
            return Ok(ds);
        }
        let mut rng = seed::derived_rng(self.seed, &[seed::stream::SUBSET, which]);
        let mut idx = index::sample(&mut rng, ds.len(), size).into_vec();
        idx.sort_unstable();
        ds.subset(&idx)
    }

    /// Layer specs for a model matching `data`.
    pub fn layer_specs(&self, input_dim: usize, num_classes: usize) -> Vec<LayerSpec> {
        let mut widths = vec![input_dim];
        widths.extend(&self.hidden_layers);
        widths.push(num_classes);
        LayerSpec::mlp(&widths)
    }

    /// Pretty JSON holding every effective value.
    pub fn echo(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Reads and validates a JSON config; relative dataset paths are taken relative to
/// the config file's directory.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = ExperimentConfig::from_json_str(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    cfg.resolve_paths(base);
    Ok(cfg)
}
