//! Canonical hashing of configurations and the per-run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Canonical JSON form of any serializable value.
///
/// Routing through `serde_json::Value` sorts object keys (the default map is
/// a `BTreeMap`), so the byte string is independent of field or file key
/// order and can be hashed.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let v: serde_json::Value = serde_json::to_value(value)?;
    Ok(serde_json::to_string(&v)?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Stable hash of a configuration value (canonical JSON, SHA-256 hex).
pub fn hash_config<T: Serialize>(value: &T) -> Result<String> {
    Ok(sha256_hex(canonical_json(value)?.as_bytes()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FailedSeed {
    pub seed: u64,
    pub error: String,
}

/// Reproducibility record written next to every command's outputs. The
/// embedded config is the effective one (after CLI overrides), so a rerun
/// from the manifest alone reproduces the data files byte for byte.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub code_version: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub failed_seeds: Vec<FailedSeed>,
    pub pool_size: usize,
    pub wall_clock_seconds: BTreeMap<String, f64>,
    /// Every file the command emitted, relative to the output directory,
    /// excluding this manifest itself.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new<C: Serialize>(command: &str, config: &C, seeds: &[u64]) -> Result<Self> {
        Ok(RunManifest {
            command: command.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: hash_config(config)?,
            config: serde_json::to_value(config)?,
            seeds: seeds.to_vec(),
            failed_seeds: Vec::new(),
            pool_size: 1,
            wall_clock_seconds: BTreeMap::new(),
            outputs: Vec::new(),
        })
    }

    pub fn record_output(&mut self, name: impl Into<String>) {
        self.outputs.push(name.into());
    }

    pub fn record_failure(&mut self, seed: u64, error: impl std::fmt::Display) {
        self.failed_seeds.push(FailedSeed { seed, error: error.to_string() });
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join("manifest.json"))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Wall-clock bookkeeping for manifest stages.
pub struct StageClock {
    start: Instant,
    stages: BTreeMap<String, f64>,
}

impl StageClock {
    pub fn new() -> Self {
        StageClock { start: Instant::now(), stages: BTreeMap::new() }
    }

    /// Close the current stage under `name`; the next stage starts now.
    pub fn lap(&mut self, name: &str) {
        let elapsed = self.start.elapsed().as_secs_f64();
        *self.stages.entry(name.to_string()).or_insert(0.0) += elapsed;
        self.start = Instant::now();
    }

    pub fn into_stages(self) -> BTreeMap<String, f64> {
        self.stages
    }
}

impl Default for StageClock {
    fn default() -> Self {
        Self::new()
    }
}
