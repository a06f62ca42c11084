//! Layer-wise linear CKA between the global model and client models after FedAvg.
//!
//! cargo run --release --example cka_study

use fednoisy::analysis::cka_layer_report;
use fednoisy::config::ExperimentConfig;

fn main() -> fednoisy::Result<()> {
    let config = ExperimentConfig::from_json_str(
        r#"{
            "dataset": {"kind": "synthetic", "num_classes": 5, "per_class": 300, "dim": 12},
            "hidden_layers": [32, 24, 16],
            "noise": {"kind": "count", "noisy_clients": 4, "within_rate": 0.5},
            "client": {"lr": 0.1, "local_epochs": 3, "batch_size": 20},
            "server": {"aggregator": {"kind": "fedavg"}, "num_clients": 8, "rounds": 15, "t_corr": 15},
            "cka_probe_size": 250,
            "seed": 2
        }"#,
    )?;
    let (train, test) = config.load_data()?;
    let mut sim = config.simulation(&train, &test)?;
    sim.run()?;

    let noisy: Vec<usize> = sim
        .assignments()
        .iter()
        .filter(|a| a.noise_rate > 0.0)
        .map(|a| a.client_id)
        .collect();
    let mut models: Vec<_> = sim.last_updates().iter().map(|u| u.params.clone()).collect();
    models.push(sim.global().clone());
    let probe = test.features.head(config.cka_probe_size);
    let report = cka_layer_report(&models, &probe, &noisy, "test head")?;

    println!("noisy clients {noisy:?}");
    println!("layer  global-noisy  global-clean");
    for layer in &report.layers {
        println!(
            "{:5}  {:12.4}  {:12.4}",
            layer.layer,
            layer.mean_global_noisy.unwrap_or(f64::NAN),
            layer.mean_global_clean.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
