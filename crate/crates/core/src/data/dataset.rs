use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use flate2::read::GzDecoder;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::seed;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Features plus class indices in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Domain("dataset must contain at least one sample".into()));
        }
        if features.shape().len() != 2 || features.rows() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Domain(format!("label {y} >= num_classes {num_classes}")));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Samples at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Result<LabeledDataset> {
        let features = self.features.select_rows(idx);
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        LabeledDataset::new(features, labels, self.num_classes)
    }

    /// First `n` samples.
    pub fn head(&self, n: usize) -> Result<LabeledDataset> {
        let n = n.min(self.len());
        LabeledDataset::new(self.features.head(n), self.labels[..n].to_vec(), self.num_classes)
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    let gz = path.extension().is_some_and(|e| e == "gz");
    let res = if gz {
        GzDecoder::new(BufReader::new(file)).read_to_end(&mut buf)
    } else {
        BufReader::new(file).read_to_end(&mut buf)
    };
    res.map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

fn be_u32(buf: &[u8], at: usize, path: &Path) -> Result<u32> {
    buf.get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            msg: "file truncated inside header".into(),
        })
}

/// Reads an IDX image/label pair (optionally `.gz`), scaling pixels to `[0, 1]`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = read_all(ip)?;
    let labels = read_all(lp)?;

    let magic = be_u32(&images, 0, ip)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format {
            path: ip.to_path_buf(),
            msg: format!("bad image magic {magic:#010x}"),
        });
    }
    let n = be_u32(&images, 4, ip)? as usize;
    let rows = be_u32(&images, 8, ip)? as usize;
    let cols = be_u32(&images, 12, ip)? as usize;
    let d = rows * cols;
    let pixels = images.get(16..16 + n * d).ok_or_else(|| Error::Format {
        path: ip.to_path_buf(),
        msg: format!("expected {} pixel bytes, file is shorter", n * d),
    })?;

    let magic = be_u32(&labels, 0, lp)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format {
            path: lp.to_path_buf(),
            msg: format!("bad label magic {magic:#010x}"),
        });
    }
    let nl = be_u32(&labels, 4, lp)? as usize;
    if nl != n {
        return Err(Error::Consistency(format!(
            "{} holds {n} images but {} holds {nl} labels",
            ip.display(),
            lp.display()
        )));
    }
    let raw_labels = labels.get(8..8 + n).ok_or_else(|| Error::Format {
        path: lp.to_path_buf(),
        msg: format!("expected {n} label bytes, file is shorter"),
    })?;

    let features = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let labels: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let k = labels.iter().max().map_or(0, |m| m + 1);
    LabeledDataset::new(Tensor::matrix(n, d, features)?, labels, k)
}

/// Gaussian blobs: one `N(0, I)` center per class, samples at `center + spread * N(0, I)`.
/// Samples are grouped by class.
pub fn make_synthetic(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if num_classes < 2 || per_class < 1 || dim < 1 {
        return Err(Error::Domain(
            "synthetic data needs >= 2 classes, >= 1 sample per class and dim >= 1".into(),
        ));
    }
    let mut rng = seed::rng(seed);
    let centers: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let n = num_classes * per_class;
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (k, c) in centers.iter().enumerate() {
        for _ in 0..per_class {
            for &m in c {
                let z: f64 = StandardNormal.sample(&mut rng);
                features.push(m + spread * z);
            }
            labels.push(k);
        }
    }
    LabeledDataset::new(Tensor::matrix(n, dim, features)?, labels, num_classes)
}
