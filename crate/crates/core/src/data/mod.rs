//! Datasets, client partitioning and label-noise injection.

mod dataset;
mod noise;
mod partition;

pub use dataset::{load_idx, make_synthetic, LabeledDataset};
pub use noise::{apply_symmetric_noise, sample_client_noise_rates, sample_truncated_gaussian, NoiseSpec};
pub use partition::{
    partition_class_skew, partition_iid, partition_quantity_skew, ClientAssignment, PartitionKind,
    PartitionSpec,
};
