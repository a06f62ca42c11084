//! Shows how the penalty changes layer-wise aggregation weights over rounds.
//!
//! cargo run --release --example layerwise_weights

use fednoisy::config::ExperimentConfig;
use fednoisy::server::{penalty_m, Aggregator};

fn main() -> fednoisy::Result<()> {
    let config = ExperimentConfig::from_json_str(
        r#"{
            "dataset": {"kind": "synthetic", "num_classes": 5, "per_class": 300, "dim": 10},
            "hidden_layers": [16, 8],
            "noise": {"kind": "count", "noisy_clients": 2},
            "client": {"lr": 0.1, "local_epochs": 2, "batch_size": 20},
            "server": {"num_clients": 6, "rounds": 12, "t_corr": 12, "tau": 50, "t_k": 10},
            "seed": 1
        }"#,
    )?;
    assert_eq!(config.server.aggregator, Aggregator::FedNcl);
    println!("penalty m for a flagged client by round:");
    for t in [1, 2, 5, 10, 20] {
        println!("  t={t:2}: m={:.1}", penalty_m(0, t, &[0], config.server.tau, config.server.t_k));
    }

    let (train, test) = config.load_data()?;
    let mut sim = config.simulation(&train, &test)?;
    for m in sim.run()? {
        if m.round % 4 != 0 {
            continue;
        }
        println!("round {}", m.round);
        for (l, row) in m.weights.iter().enumerate() {
            let cells: Vec<String> = row
                .iter()
                .zip(&m.clients)
                .map(|(w, c)| format!("{w:.3}{}", if c.flagged { "*" } else { " " }))
                .collect();
            println!("  layer {l}: {}", cells.join(" "));
        }
    }
    println!("(* = flagged that round)");
    Ok(())
}
