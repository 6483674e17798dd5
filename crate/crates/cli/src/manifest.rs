use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Everything that determines a run's outputs. Written before any output so
/// an interrupted run still records what it was doing.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Option<PathBuf>,
    pub master_seed: Option<u64>,
    pub out_dir: PathBuf,
    pub tool_version: String,
    pub arguments: serde_json::Value,
    /// sha256 of each input file, keyed by the path as given.
    pub inputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl RunManifest {
    pub fn hash_input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs
            .insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    /// Writes `manifest.json` and returns its hash.
    pub fn write(&self) -> Result<String> {
        fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("creating {}", self.out_dir.display()))?;
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(self.out_dir.join("manifest.json"), &text)?;
        Ok(sha256_hex(text.as_bytes()))
    }
}
