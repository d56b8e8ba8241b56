//! Per-run manifest recording everything needed to repeat a run.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    /// Every resolved config key.
    pub config: serde_json::Value,
    /// Command-specific arguments outside the config (image path, target, backends).
    pub arguments: BTreeMap<String, String>,
    /// sha256 of each input file, keyed by role.
    pub input_hashes: BTreeMap<String, String>,
    /// Files written to the output directory, manifest included.
    pub outputs: Vec<String>,
    pub duration_seconds: f64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
