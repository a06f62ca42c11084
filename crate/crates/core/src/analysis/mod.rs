//! Diagnostics: CKA layer similarity, accuracy, divergence traces and metrics files.

mod cka;
mod eval;
mod metrics;

pub use cka::{cka_layer_report, linear_cka, CkaReport, LayerCka};
pub use eval::{evaluate_accuracy, mean_last, std_last, weight_divergence};
pub use metrics::{
    fmt_sig9, read_metrics_csv, read_metrics_jsonl, round_sig9, write_metrics, ClientRecord, CorrectionEvent,
    MetricsFormat, RoundMetrics,
};
