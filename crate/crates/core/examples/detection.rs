//! Steps a Fed-NCL simulation and prints reliability scores and flags per round.
//!
//! cargo run --release --example detection

use fednoisy::config::ExperimentConfig;

fn main() -> fednoisy::Result<()> {
    let config = ExperimentConfig::from_json_str(
        r#"{
            "dataset": {"kind": "synthetic", "num_classes": 5, "per_class": 400, "dim": 10},
            "hidden_layers": [16],
            "noise": {"kind": "count", "noisy_clients": 3},
            "client": {"lr": 0.1, "local_epochs": 2, "batch_size": 20},
            "server": {"aggregator": {"kind": "fed_ncl"}, "num_clients": 10, "rounds": 8, "t_corr": 8},
            "seed": 5
        }"#,
    )?;
    let (train, test) = config.load_data()?;
    let mut sim = config.simulation(&train, &test)?;
    for _ in 0..config.server.rounds {
        let m = sim.run_round()?;
        let line: Vec<String> = m
            .clients
            .iter()
            .map(|c| {
                let mark = match (c.noise_rate > 0.0, c.flagged) {
                    (true, true) => "TP",
                    (false, true) => "FP",
                    (true, false) => "FN",
                    (false, false) => "  ",
                };
                format!("{:7.3}{mark}", c.q)
            })
            .collect();
        println!("round {:2} acc {:.3} | {}", m.round, m.accuracy, line.join(" "));
    }
    let ever = sim.history().ever_flagged();
    println!("ever flagged: {ever:?}");
    Ok(())
}
