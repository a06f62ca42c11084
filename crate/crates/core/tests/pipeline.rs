mod common;

use common::*;
use fednoisy::analysis::{evaluate_accuracy, read_metrics_csv, write_metrics, ClientRecord, MetricsFormat, RoundMetrics};
use fednoisy::client::{apply_label_correction, data_quality_loss, local_train, ClientConfig};
use fednoisy::data::{apply_symmetric_noise, make_synthetic, partition_iid, ClientAssignment, LabeledDataset, NoiseSpec};
use fednoisy::nn::{Activation, DenseLayer, LayerSpec, ModelParams, Tensor};
use fednoisy::server::{run_experiment, Aggregator};

/// Trains a model centrally (one client holding everything) on clean labels.
fn clean_model(ds: &LabeledDataset, seed: u64) -> ModelParams {
    let all = partition_iid(ds, 1, seed).unwrap().remove(0);
    let init = ModelParams::init(&LayerSpec::mlp(&[ds.dim(), 16, ds.num_classes]), seed).unwrap();
    let cfg = ClientConfig {
        lr: 0.1,
        local_epochs: 5,
        batch_size: 20,
        ..Default::default()
    };
    local_train(&init, &all, ds, &cfg, 1, seed).unwrap().params
}

#[test]
fn noisy_client_has_higher_loss_on_clean_global() {
    let mut wins = 0;
    for seed in 0..10 {
        let ds = make_synthetic(5, 200, 8, 1.0, seed).unwrap();
        let global = clean_model(&ds, seed);
        let parts = partition_iid(&ds, 2, seed + 100).unwrap();
        let clean = &parts[0];
        let noisy = apply_symmetric_noise(&parts[1], 1.0, 5, seed).unwrap();
        let h_clean = data_quality_loss(&global, clean, &ds).unwrap();
        let h_noisy = data_quality_loss(&global, &noisy, &ds).unwrap();
        wins += usize::from(h_noisy > h_clean);
    }
    assert!(wins >= 9, "{wins}/10");
}

#[test]
fn loss_rises_with_noise_rate() {
    let ds = make_synthetic(5, 400, 8, 1.0, 3).unwrap();
    let global = clean_model(&ds, 3);
    let parts = partition_iid(&ds, 10, 4).unwrap();
    let rates: Vec<f64> = (0..10).map(|c| c as f64 / 9.0).collect();
    let hs: Vec<f64> = parts
        .iter()
        .zip(&rates)
        .map(|(a, &r)| data_quality_loss(&global, &apply_symmetric_noise(a, r, 5, 4).unwrap(), &ds).unwrap())
        .collect();
    assert!(spearman(&rates, &hs) > 0.9, "{hs:?}");
}

/// One-hot inputs and an identity-activation layer whose softmax puts 0.99 on
/// the true class.
fn oracle_setup(k: usize, n: usize) -> (LabeledDataset, ModelParams) {
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    let mut x = vec![0.0; n * k];
    for (i, &y) in labels.iter().enumerate() {
        x[i * k + y] = 1.0;
    }
    let ds = LabeledDataset::new(Tensor::matrix(n, k, x).unwrap(), labels, k).unwrap();
    let c = (0.99 * (k - 1) as f64 / 0.01).ln();
    let mut w = vec![0.0; k * k];
    for j in 0..k {
        w[j * k + j] = c;
    }
    let layer = DenseLayer {
        spec: LayerSpec::new(k, k, Activation::Identity),
        weights: w,
        bias: vec![0.0; k],
    };
    (ds, ModelParams::from_layers(vec![layer]).unwrap())
}

#[test]
fn oracle_correction_restores_all_labels() {
    let (ds, oracle) = oracle_setup(10, 400);
    let (_, conf) = oracle.predict_confidences(&ds.features).unwrap();
    assert!(conf.iter().all(|&c| (c - 0.99).abs() < 1e-12));
    let client = ClientAssignment::new(0, (0..400).collect(), &ds);
    let noisy = apply_symmetric_noise(&client, 0.5, 10, 1).unwrap();
    assert!((noisy.flip_fraction() - 0.5).abs() < 1e-12);
    let (fixed, n) = apply_label_correction(&noisy, &oracle, &ds, 0.9).unwrap();
    assert_eq!(n, 400);
    assert_eq!(fixed.noisy_labels, fixed.true_labels);
    let (same, n) = apply_label_correction(&noisy, &oracle, &ds, 1.0).unwrap();
    assert_eq!(n, 0);
    assert_eq!(same.noisy_labels, noisy.noisy_labels);
}

#[test]
fn random_model_on_random_labels_is_chance() {
    let n = 10_000;
    let mut rng = Lcg(5);
    let x = random_matrix(n, 6, &mut rng);
    let labels: Vec<usize> = (0..n).map(|_| rng.below(10)).collect();
    let ds = LabeledDataset::new(x, labels, 10).unwrap();
    let model = random_model(&[6, 8, 10], &mut rng);
    let acc = evaluate_accuracy(&model, &ds).unwrap();
    assert!((acc - 0.1).abs() <= 0.02, "{acc}");
}

#[test]
fn synthetic_clean_run_learns() {
    let cfg = synthetic_config(0, Aggregator::FedAvg, NoiseSpec::None, 15);
    let (tr, te) = cfg.load_data().unwrap();
    let m = run_experiment(&cfg, &tr, &te).unwrap();
    assert!(m.last().unwrap().accuracy >= 0.95, "{}", m.last().unwrap().accuracy);
}

#[test]
fn clean_fed_ncl_tracks_fedavg() {
    let mut flag_rates = Vec::new();
    for seed in 0..3 {
        let base = synthetic_config(seed, Aggregator::FedAvg, NoiseSpec::None, 15);
        let ncl = synthetic_config(seed, Aggregator::FedNcl, NoiseSpec::None, 15);
        let (tr, te) = base.load_data().unwrap();
        let a = run_experiment(&base, &tr, &te).unwrap();
        let b = run_experiment(&ncl, &tr, &te).unwrap();
        let (fa, fb) = (a.last().unwrap().accuracy, b.last().unwrap().accuracy);
        assert!((fa - fb).abs() <= 0.02, "seed {seed}: fedavg {fa} fed_ncl {fb}");
        let flags = b.iter().flat_map(|r| &r.clients).filter(|c| c.flagged).count();
        flag_rates.push(flags as f64 / (15 * 10) as f64);
    }
    println!("clean-run flag rate per seed: {flag_rates:?}");
}

#[test]
fn fed_ncl_downweights_flagged_clients() {
    let cfg = synthetic_config(1, Aggregator::FedNcl, NoiseSpec::Bernoulli { p: 0.6, within_rate: 1.0 }, 12);
    let (tr, te) = cfg.load_data().unwrap();
    let m = run_experiment(&cfg, &tr, &te).unwrap();
    for r in m.iter().filter(|r| r.round >= 10) {
        for row in &r.weights {
            let flagged: Vec<f64> = r.clients.iter().filter(|c| c.flagged).map(|c| row[c.client]).collect();
            let clean: Vec<f64> = r.clients.iter().filter(|c| !c.flagged).map(|c| row[c.client]).collect();
            if let (Some(&fmax), Some(&cmin)) = (
                flagged.iter().max_by(|a, b| a.total_cmp(b)),
                clean.iter().min_by(|a, b| a.total_cmp(b)),
            ) {
                assert!(fmax < cmin, "round {}: {fmax} vs {cmin}", r.round);
            }
        }
    }
}

#[test]
fn full_schedule_csv_has_one_row_per_round_and_client() {
    let metrics: Vec<RoundMetrics> = (1..=150)
        .map(|r| RoundMetrics {
            round: r,
            accuracy: 0.5,
            clients: (0..20)
                .map(|c| ClientRecord {
                    client: c,
                    n_samples: 100,
                    noise_rate: 0.0,
                    h: 1.0,
                    divergence: 0.1,
                    q: 0.001,
                    flagged: false,
                })
                .collect(),
            weights: vec![vec![0.05; 20]; 3],
            corrections: vec![],
            wall_clock_secs: 0.0,
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    write_metrics(&metrics, &path, MetricsFormat::Csv).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 1 + 3000);
    assert_eq!(read_metrics_csv(&path).unwrap().len(), 150);

    write_metrics(&[], &path, MetricsFormat::Csv).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 1);
    let jpath = dir.path().join("m.jsonl");
    write_metrics(&[], &jpath, MetricsFormat::Jsonl).unwrap();
    assert_eq!(std::fs::read_to_string(&jpath).unwrap(), "");
}
