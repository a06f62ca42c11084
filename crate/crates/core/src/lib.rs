//! Deterministic federated-learning simulator for studying clients with noisy labels.
//!
//! The crate covers the whole pipeline: a small dense network engine, dataset
//! loading and partitioning, client-level label-noise models, local SGD clients,
//! four server aggregation rules (FedAvg, trimmed mean, FedProx and Fed-NCL with
//! reliability-score detection, penalized layer-wise weights and label
//! correction), and diagnostics such as linear CKA.
//!
//! ```no_run
//! use fednoisy::config::ExperimentConfig;
//! use fednoisy::server::run_experiment;
//!
//! let config = ExperimentConfig::from_json_str(r#"{"server": {"rounds": 60}}"#)?;
//! let (train, test) = config.load_data()?;
//! let metrics = run_experiment(&config, &train, &test)?;
//! println!("final accuracy {:.3}", metrics.last().unwrap().accuracy);
//! # Ok::<(), fednoisy::Error>(())
//! ```

pub mod analysis;
pub mod checkpoint;
pub mod client;
pub mod commands;
pub mod config;
pub mod data;
mod error;
pub mod nn;
pub mod seed;
pub mod server;

pub use error::{Error, Result};
