//! Label correction at the end of the warm-up phase, and its effect on label accuracy.
//!
//! cargo run --release --example label_correction

use fednoisy::config::ExperimentConfig;

fn main() -> fednoisy::Result<()> {
    let config = ExperimentConfig::from_json_str(
        r#"{
            "dataset": {"kind": "synthetic", "num_classes": 5, "per_class": 400, "dim": 10},
            "hidden_layers": [16],
            "noise": {"kind": "count", "noisy_clients": 3, "within_rate": 0.4},
            "client": {"lr": 0.1, "local_epochs": 2, "batch_size": 20},
            "server": {"num_clients": 10, "rounds": 15, "t_corr": 10, "eta": 0.8, "alpha": 0.6},
            "seed": 3
        }"#,
    )?;
    let (train, test) = config.load_data()?;
    let mut sim = config.simulation(&train, &test)?;

    let label_acc = |sim: &fednoisy::server::Simulation| -> Vec<f64> {
        sim.assignments().iter().map(|a| 1.0 - a.flip_fraction()).collect()
    };
    let before = label_acc(&sim);
    for m in sim.run()? {
        for e in &m.corrections {
            println!("round {}: client {} relabeled {} samples", m.round, e.client, e.relabeled);
        }
    }
    let after = label_acc(&sim);
    for (a, (b, c)) in sim.assignments().iter().zip(before.iter().zip(&after)) {
        if a.noise_rate > 0.0 || b != c {
            println!("client {}: label accuracy {b:.3} -> {c:.3}", a.client_id);
        }
    }
    Ok(())
}
