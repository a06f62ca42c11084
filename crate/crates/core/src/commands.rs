//! Subcommand implementations behind the `fednoisy` binary. Every file they
//! write lands under the configured output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{cka_layer_report, fmt_sig9, mean_last, std_last, write_metrics, MetricsFormat, RoundMetrics};
use crate::checkpoint;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::server::{prepare_clients, Aggregator};

/// Command-line overrides applied on top of a parsed config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(w) = self.workers {
            config.workers = w;
        }
    }
}

/// Detection quality against the ground-truth noise rates, pooled over every
/// (round, client) decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionQuality {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// `None` when nothing was flagged.
    pub precision: Option<f64>,
    /// `None` when no client is noisy.
    pub recall: Option<f64>,
}

pub fn detection_quality(metrics: &[RoundMetrics]) -> DetectionQuality {
    let (mut tp, mut fp, mut fneg) = (0, 0, 0);
    for m in metrics {
        for c in &m.clients {
            match (c.flagged, c.noise_rate > 0.0) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                (false, false) => {}
            }
        }
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    DetectionQuality {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fneg,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fneg),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub aggregator: String,
    pub rounds: usize,
    pub final_accuracy: Option<f64>,
    pub mean_last10_accuracy: Option<f64>,
    pub std_last10_accuracy: Option<f64>,
    pub noisy_clients: Vec<usize>,
    pub corrected_clients: Vec<usize>,
    pub detection: DetectionQuality,
}

pub fn summarize(config: &ExperimentConfig, metrics: &[RoundMetrics]) -> RunSummary {
    let acc: Vec<f64> = metrics.iter().map(|m| m.accuracy).collect();
    let nonempty = |v: f64| (!acc.is_empty()).then_some(v);
    RunSummary {
        aggregator: config.server.aggregator.name(),
        rounds: metrics.len(),
        final_accuracy: acc.last().copied(),
        mean_last10_accuracy: nonempty(mean_last(&acc, 10)),
        std_last10_accuracy: nonempty(std_last(&acc, 10)),
        noisy_clients: metrics
            .first()
            .map(|m| m.clients.iter().filter(|c| c.noise_rate > 0.0).map(|c| c.client).collect())
            .unwrap_or_default(),
        corrected_clients: metrics
            .iter()
            .flat_map(|m| m.corrections.iter().map(|e| e.client))
            .collect(),
        detection: detection_quality(metrics),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    write_text(path, &(text + "\n"))
}

/// Runs one experiment and writes `metrics.csv`, `metrics.jsonl`, `config.json`,
/// `summary.json`, and `timing.log` (wall-clock seconds, kept apart from the
/// deterministic outputs). Checkpoints go under `checkpoints/` when enabled.
pub fn cmd_run(config: &ExperimentConfig) -> Result<RunSummary> {
    config.validate()?;
    let out = &config.out_dir;
    create_dir(out)?;
    write_text(&out.join("config.json"), &(config.echo() + "\n"))?;
    let (train, test) = config.load_data()?;
    let mut sim = config.simulation(&train, &test)?;
    let ckpt_root = out.join("checkpoints");
    let mut metrics = Vec::with_capacity(config.server.rounds);
    let mut timing = String::from("round,wall_clock_secs\n");
    while sim.round() < config.server.rounds {
        let m = sim.run_round()?;
        log::info!("round {:>3}  accuracy {:.4}  flagged {:?}", m.round, m.accuracy, flagged(&m));
        writeln!(timing, "{},{}", m.round, m.wall_clock_secs).expect("string write");
        if config.save_checkpoints && m.round % config.checkpoint_every == 0 {
            let clients: Vec<_> = sim.last_updates().iter().map(|u| u.params.clone()).collect();
            let rates: Vec<f64> = sim.assignments().iter().map(|a| a.noise_rate).collect();
            checkpoint::save_round(&ckpt_root, m.round, sim.global(), &clients, &rates)?;
        }
        metrics.push(m);
    }
    write_metrics(&metrics, out.join("metrics.csv"), MetricsFormat::Csv)?;
    write_metrics(&metrics, out.join("metrics.jsonl"), MetricsFormat::Jsonl)?;
    write_text(&out.join("timing.log"), &timing)?;
    let summary = summarize(config, &metrics);
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

fn flagged(m: &RoundMetrics) -> Vec<usize> {
    m.clients.iter().filter(|c| c.flagged).map(|c| c.client).collect()
}

/// Accuracy per round for each aggregator, one column each.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub aggregators: Vec<Aggregator>,
    /// `accuracy[a][r]` is aggregator `a` at round `r + 1`.
    pub accuracy: Vec<Vec<f64>>,
    pub summaries: Vec<RunSummary>,
}

/// Runs the same seeds, partitions and noise under each aggregator and writes
/// `compare.csv` (round x aggregator accuracy) and `compare_summary.json`.
pub fn cmd_compare(config: &ExperimentConfig, aggregators: &[Aggregator]) -> Result<Comparison> {
    if aggregators.len() < 2 {
        return Err(Error::config("aggregators", "compare needs at least two aggregators"));
    }
    let runs: Vec<ExperimentConfig> = aggregators
        .iter()
        .map(|&a| {
            let mut c = config.clone();
            c.server.aggregator = a;
            c
        })
        .collect();
    for c in &runs {
        c.validate()?;
    }
    create_dir(&config.out_dir)?;
    write_text(&config.out_dir.join("config.json"), &(config.echo() + "\n"))?;
    let (train, test) = config.load_data()?;
    let mut accuracy = Vec::new();
    let mut summaries = Vec::new();
    for c in &runs {
        log::info!("running {}", c.server.aggregator);
        let metrics = c.simulation(&train, &test)?.run()?;
        accuracy.push(metrics.iter().map(|m| m.accuracy).collect::<Vec<_>>());
        summaries.push(summarize(c, &metrics));
    }
    let mut csv = String::from("round");
    for a in aggregators {
        write!(csv, ",{a}").expect("string write");
    }
    csv.push('\n');
    for r in 0..config.server.rounds {
        write!(csv, "{}", r + 1).expect("string write");
        for col in &accuracy {
            write!(csv, ",{}", fmt_sig9(col[r])).expect("string write");
        }
        csv.push('\n');
    }
    write_text(&config.out_dir.join("compare.csv"), &csv)?;
    write_json(&config.out_dir.join("compare_summary.json"), &summaries)?;
    Ok(Comparison {
        aggregators: aggregators.to_vec(),
        accuracy,
        summaries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfileRow {
    pub client: usize,
    pub n_samples: usize,
    pub noise_rate: f64,
    pub flip_fraction: f64,
}

/// Samples client noise and flips labels without training; writes `noise_profile.csv`.
pub fn cmd_noise_preview(config: &ExperimentConfig) -> Result<Vec<NoiseProfileRow>> {
    config.validate()?;
    let (train, _) = config.load_data()?;
    let clients = prepare_clients(
        &train,
        config.partition,
        &config.noise,
        config.server.num_clients,
        config.seed,
    )?;
    let rows: Vec<NoiseProfileRow> = clients
        .iter()
        .map(|a| NoiseProfileRow {
            client: a.client_id,
            n_samples: a.len(),
            noise_rate: a.noise_rate,
            flip_fraction: a.flip_fraction(),
        })
        .collect();
    let mut csv = String::from("client,n_samples,noise_rate,flip_fraction\n");
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{}",
            r.client,
            r.n_samples,
            fmt_sig9(r.noise_rate),
            fmt_sig9(r.flip_fraction)
        )
        .expect("string write");
    }
    create_dir(&config.out_dir)?;
    write_text(&config.out_dir.join("noise_profile.csv"), &csv)?;
    Ok(rows)
}

/// Per-layer mean CKA between the global model and the noisy or clean clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthPoint {
    pub round: usize,
    pub layer: usize,
    pub global_noisy: Option<f64>,
    pub global_clean: Option<f64>,
}

/// Reads checkpoints from `<out>/checkpoints` and writes `cka_layer_<l>.csv` for
/// the latest selected round plus `cka_depth.csv` for every selected round.
/// `round = None` selects every stored round.
pub fn cmd_cka(config: &ExperimentConfig, round: Option<usize>) -> Result<Vec<DepthPoint>> {
    config.validate()?;
    let root = config.out_dir.join("checkpoints");
    let rounds = match round {
        Some(r) => vec![r],
        None => checkpoint::list_rounds(&root)?,
    };
    if rounds.is_empty() {
        let every = config.checkpoint_every;
        return Err(Error::State(format!(
            "no checkpoints found; expected {} (run with save_checkpoints enabled)",
            checkpoint::round_dir(&root, every).join("manifest.json").display()
        )));
    }
    let (_, test) = config.load_data()?;
    let probe_n = config.cka_probe_size.min(test.len());
    let probe = test.features.head(probe_n);
    let probe_id = format!("test[0..{probe_n}]");

    let mut depth = Vec::new();
    let mut last = None;
    for &r in &rounds {
        let ck = checkpoint::load_round(&root, r)?;
        let noisy: Vec<usize> = (0..ck.manifest.clients)
            .filter(|&c| ck.manifest.noise_rates.get(c).copied().unwrap_or(0.0) > 0.0)
            .collect();
        let mut models = ck.clients;
        models.push(ck.global);
        let report = cka_layer_report(&models, &probe, &noisy, &probe_id)?;
        for l in &report.layers {
            depth.push(DepthPoint {
                round: r,
                layer: l.layer,
                global_noisy: l.mean_global_noisy,
                global_clean: l.mean_global_clean,
            });
        }
        last = Some(report);
    }
    let report = last.expect("at least one round");
    let out = &config.out_dir;
    create_dir(out)?;
    for l in &report.layers {
        let mut csv = format!("model,{}\n", report.model_labels.join(","));
        for (label, row) in report.model_labels.iter().zip(&l.matrix) {
            csv.push_str(label);
            for v in row {
                write!(csv, ",{}", fmt_sig9(*v)).expect("string write");
            }
            csv.push('\n');
        }
        write_text(&out.join(format!("cka_layer_{}.csv", l.layer)), &csv)?;
    }
    let opt = |v: Option<f64>| v.map(fmt_sig9).unwrap_or_default();
    let mut csv = String::from("round,layer,global_noisy,global_clean\n");
    for p in &depth {
        writeln!(csv, "{},{},{},{}", p.round, p.layer, opt(p.global_noisy), opt(p.global_clean)).expect("string write");
    }
    write_text(&out.join("cka_depth.csv"), &csv)?;
    Ok(depth)
}
