//! Model checkpoints: one flat little-endian `f64` blob per model plus a JSON
//! manifest describing the layer shapes.
//!
//! Layout of a round directory:
//!
//! ```text
//! round_0040/
//!   manifest.json
//!   global.bin
//!   client_00.bin ... client_19.bin
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub round: usize,
    pub layers: Vec<LayerSpec>,
    pub num_params: usize,
    pub clients: usize,
    /// Ground-truth noise rate per client.
    pub noise_rates: Vec<f64>,
}

pub fn round_dir(root: &Path, round: usize) -> PathBuf {
    root.join(format!("round_{round:04}"))
}

fn client_file(dir: &Path, client: usize) -> PathBuf {
    dir.join(format!("client_{client:02}.bin"))
}

fn write_blob(path: &Path, params: &ModelParams) -> Result<()> {
    let bytes: Vec<u8> = params.flatten().iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_blob(path: &Path, specs: &[LayerSpec]) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("{} bytes is not a whole number of f64 values", bytes.len()),
        });
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    ModelParams::unflatten(specs, &flat).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// Writes the global model and every client model for one round.
pub fn save_round(
    root: &Path,
    round: usize,
    global: &ModelParams,
    clients: &[ModelParams],
    noise_rates: &[f64],
) -> Result<PathBuf> {
    let dir = round_dir(root, round);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let manifest = CheckpointManifest {
        round,
        layers: global.specs(),
        num_params: global.num_params(),
        clients: clients.len(),
        noise_rates: noise_rates.to_vec(),
    };
    let mpath = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&mpath, text + "\n").map_err(|e| Error::io(&mpath, e))?;
    write_blob(&dir.join("global.bin"), global)?;
    for (c, m) in clients.iter().enumerate() {
        write_blob(&client_file(&dir, c), m)?;
    }
    Ok(dir)
}

/// A loaded round: client models in order, then the global model.
#[derive(Debug, Clone)]
pub struct RoundCheckpoint {
    pub manifest: CheckpointManifest,
    pub clients: Vec<ModelParams>,
    pub global: ModelParams,
}

pub fn load_round(root: &Path, round: usize) -> Result<RoundCheckpoint> {
    let dir = round_dir(root, round);
    let mpath = dir.join("manifest.json");
    if !mpath.is_file() {
        return Err(Error::State(format!(
            "missing checkpoint for round {round}: expected {}",
            mpath.display()
        )));
    }
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: mpath.clone(),
        source: e,
    })?;
    let expected: Vec<PathBuf> = std::iter::once(dir.join("global.bin"))
        .chain((0..manifest.clients).map(|c| client_file(&dir, c)))
        .collect();
    let missing: Vec<String> = expected
        .iter()
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::State(format!("missing checkpoint files: {}", missing.join(", "))));
    }
    let global = read_blob(&expected[0], &manifest.layers)?;
    let clients = expected[1..]
        .iter()
        .map(|p| read_blob(p, &manifest.layers))
        .collect::<Result<_>>()?;
    Ok(RoundCheckpoint {
        manifest,
        clients,
        global,
    })
}

/// Rounds that have a manifest under `root`, ascending.
pub fn list_rounds(root: &Path) -> Result<Vec<usize>> {
    let mut rounds = Vec::new();
    if !root.is_dir() {
        return Ok(rounds);
    }
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let name = entry.file_name();
        if let Some(r) = name.to_str().and_then(|n| n.strip_prefix("round_")).and_then(|n| n.parse().ok()) {
            if entry.path().join("manifest.json").is_file() {
                rounds.push(r);
            }
        }
    }
    rounds.sort_unstable();
    Ok(rounds)
}
