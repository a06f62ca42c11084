//! Per-round records and their CSV / JSONL persistence.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One client's line in a round record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRecord {
    pub client: usize,
    pub n_samples: usize,
    /// Ground-truth noise rate assigned at setup.
    pub noise_rate: f64,
    pub h: f64,
    /// `e = ‖Θ_G − Θ_c‖²` against the round-start global model.
    pub divergence: f64,
    pub q: f64,
    /// Detector output for this round. Computed under every aggregator; only
    /// Fed-NCL acts on it.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionEvent {
    pub client: usize,
    pub relabeled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub accuracy: f64,
    pub clients: Vec<ClientRecord>,
    /// Effective aggregation weights, one row per layer, one column per client.
    /// Empty for rules without per-client weights (trimmed mean).
    pub weights: Vec<Vec<f64>>,
    pub corrections: Vec<CorrectionEvent>,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricsFormat {
    Csv,
    Jsonl,
}

/// Rounds `x` to 9 significant digits.
pub fn round_sig9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

/// `%.9g`-style rendering: 9 significant digits, trailing zeros dropped, scientific
/// notation only for very small or large magnitudes.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.8e}");
    let (mant, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{:.*}", decimals, round_sig9(x));
        trim_zeros(&s).to_string()
    } else {
        format!("{}e{exp}", trim_zeros(mant))
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

const BASE_COLUMNS: [&str; 10] = [
    "round",
    "accuracy",
    "client",
    "n_samples",
    "noise_rate",
    "h",
    "divergence",
    "q",
    "flagged",
    "relabeled",
];

fn csv_header(layers: usize) -> String {
    let mut cols: Vec<String> = BASE_COLUMNS.iter().map(|s| s.to_string()).collect();
    cols.extend((0..layers).map(|l| format!("w_layer{l}")));
    cols.join(",")
}

/// Writes one row per (round, client) or one JSON object per round.
pub fn write_metrics(metrics: &[RoundMetrics], path: impl AsRef<Path>, format: MetricsFormat) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    match format {
        MetricsFormat::Csv => {
            let layers = metrics.iter().map(|m| m.weights.len()).max().unwrap_or(0);
            writeln!(out, "{}", csv_header(layers)).map_err(io)?;
            for m in metrics {
                for (i, c) in m.clients.iter().enumerate() {
                    let relabeled = m
                        .corrections
                        .iter()
                        .find(|e| e.client == c.client)
                        .map(|e| e.relabeled.to_string())
                        .unwrap_or_default();
                    let mut row = vec![
                        m.round.to_string(),
                        fmt_sig9(m.accuracy),
                        c.client.to_string(),
                        c.n_samples.to_string(),
                        fmt_sig9(c.noise_rate),
                        fmt_sig9(c.h),
                        fmt_sig9(c.divergence),
                        fmt_sig9(c.q),
                        u8::from(c.flagged).to_string(),
                        relabeled,
                    ];
                    for l in 0..layers {
                        row.push(
                            m.weights
                                .get(l)
                                .and_then(|r| r.get(i))
                                .map(|&w| fmt_sig9(w))
                                .unwrap_or_default(),
                        );
                    }
                    writeln!(out, "{}", row.join(",")).map_err(io)?;
                }
            }
        }
        MetricsFormat::Jsonl => {
            for m in metrics {
                let rounded = RoundMetrics {
                    accuracy: round_sig9(m.accuracy),
                    clients: m
                        .clients
                        .iter()
                        .map(|c| ClientRecord {
                            noise_rate: round_sig9(c.noise_rate),
                            h: round_sig9(c.h),
                            divergence: round_sig9(c.divergence),
                            q: round_sig9(c.q),
                            ..c.clone()
                        })
                        .collect(),
                    weights: m
                        .weights
                        .iter()
                        .map(|r| r.iter().map(|&w| round_sig9(w)).collect())
                        .collect(),
                    ..m.clone()
                };
                let line = serde_json::to_string(&rounded).map_err(|e| Error::Json {
                    path: path.to_path_buf(),
                    source: e,
                })?;
                writeln!(out, "{line}").map_err(io)?;
            }
        }
    }
    out.flush().map_err(io)
}

fn bad(path: &Path, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: format!("line {line}: {msg}"),
    }
}

/// Parses a CSV written by [`write_metrics`] back into round records.
pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<RoundMetrics>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(h) => h.map_err(|e| Error::io(path, e))?,
        None => return Err(bad(path, 1, "missing header")),
    };
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < BASE_COLUMNS.len() || cols[..BASE_COLUMNS.len()] != BASE_COLUMNS {
        return Err(bad(path, 1, "unexpected header"));
    }
    let layers = cols.len() - BASE_COLUMNS.len();
    let mut out: Vec<RoundMetrics> = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(bad(path, lineno, format!("expected {} fields, got {}", cols.len(), f.len())));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|e| bad(path, lineno, e));
        let real = |s: &str| s.parse::<f64>().map_err(|e| bad(path, lineno, e));
        let round = int(f[0])?;
        if out.last().map(|m| m.round) != Some(round) {
            out.push(RoundMetrics {
                round,
                accuracy: real(f[1])?,
                clients: Vec::new(),
                weights: Vec::new(),
                corrections: Vec::new(),
                wall_clock_secs: 0.0,
            });
        }
        let m = out.last_mut().expect("just pushed");
        let client = int(f[2])?;
        m.clients.push(ClientRecord {
            client,
            n_samples: int(f[3])?,
            noise_rate: real(f[4])?,
            h: real(f[5])?,
            divergence: real(f[6])?,
            q: real(f[7])?,
            flagged: match f[8] {
                "0" => false,
                "1" => true,
                other => return Err(bad(path, lineno, format!("bad flag {other:?}"))),
            },
        });
        if !f[9].is_empty() {
            m.corrections.push(CorrectionEvent {
                client,
                relabeled: int(f[9])?,
            });
        }
        let ws = &f[BASE_COLUMNS.len()..];
        if layers > 0 && ws.iter().all(|s| !s.is_empty()) {
            if m.weights.is_empty() {
                m.weights = vec![Vec::new(); layers];
            }
            for (row, s) in m.weights.iter_mut().zip(ws) {
                row.push(real(s)?);
            }
        }
    }
    Ok(out)
}

pub fn read_metrics_jsonl(path: impl AsRef<Path>) -> Result<Vec<RoundMetrics>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| Error::Json {
                path: path.to_path_buf(),
                source: e,
            })
        })
        .collect()
}
