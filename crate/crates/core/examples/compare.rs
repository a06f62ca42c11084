//! Runs every aggregation rule on the same noisy federation.
//!
//! Uses the bundled MNIST subset when it is present, synthetic blobs otherwise.
//!
//! cargo run --release --example compare

use std::path::Path;

use fednoisy::analysis::{mean_last, std_last};
use fednoisy::config::ExperimentConfig;
use fednoisy::server::{run_experiment, Aggregator};

fn main() -> fednoisy::Result<()> {
    let mnist = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    let dataset = if mnist.is_dir() {
        format!(r#"{{"kind": "mnist", "dir": {:?}}}"#, mnist)
    } else {
        r#"{"kind": "synthetic", "num_classes": 10, "per_class": 200, "dim": 20}"#.to_string()
    };
    let base = ExperimentConfig::from_json_str(&format!(
        r#"{{
            "dataset": {dataset},
            "noise": {{"kind": "bernoulli", "p": 0.7}},
            "client": {{"lr": 0.2}},
            "server": {{"rounds": 30, "t_corr": 30}},
            "seed": 0
        }}"#
    ))?;
    let (train, test) = base.load_data()?;
    let rules = [
        Aggregator::FedAvg,
        Aggregator::TrimmedMean { k_pct: 10.0 },
        Aggregator::FedProx { mu: 0.01 },
        Aggregator::FedNcl,
    ];
    println!("{:16} {:>8} {:>12} {:>10}", "aggregator", "final", "last-10 mean", "last-10 sd");
    for rule in rules {
        let mut config = base.clone();
        config.server.aggregator = rule;
        let acc: Vec<f64> = run_experiment(&config, &train, &test)?.iter().map(|m| m.accuracy).collect();
        println!(
            "{:16} {:8.4} {:12.4} {:10.4}",
            rule.to_string(),
            acc[acc.len() - 1],
            mean_last(&acc, 10),
            std_last(&acc, 10)
        );
    }
    Ok(())
}
