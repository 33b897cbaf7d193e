//! Atomic artifact writing and the run manifest.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

#[derive(Clone, Debug, Serialize)]
pub struct OutputRecord {
    pub file: String,
    pub sha256: String,
    /// Set when the file holds only the points that succeeded.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub partial: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct PointFailure {
    pub index: usize,
    pub value: f64,
    pub error: String,
}

/// Where each top-level setting came from.
#[derive(Clone, Debug, Serialize)]
pub struct Sources {
    pub seed: &'static str,
    pub out_dir: &'static str,
    pub workers: &'static str,
    pub dump_state: &'static str,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub config: RunConfig,
    pub workers: usize,
    pub sources: Sources,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<OutputRecord>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<PointFailure>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub summary: serde_json::Value,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `bytes` to `dir/name` through a temporary file in the same
/// directory and a rename, so readers never see a half-written file.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> std::io::Result<PathBuf> {
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    let target = dir.join(name);
    tmp.persist(&target).map_err(|e| e.error)?;
    Ok(target)
}

/// In-memory artifacts, flushed together once a run finishes.
#[derive(Default)]
pub struct Artifacts {
    files: Vec<(String, Vec<u8>, bool)>,
}

impl Artifacts {
    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes, false));
    }

    pub fn add_partial(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes, true));
    }

    pub fn add_json<T: Serialize>(&mut self, name: impl Into<String>, value: &T) {
        let mut bytes = serde_json::to_vec_pretty(value).expect("artifact serializes");
        bytes.push(b'\n');
        self.add(name, bytes);
    }

    pub fn write_all(&self, dir: &Path) -> std::io::Result<Vec<OutputRecord>> {
        std::fs::create_dir_all(dir)?;
        self.files
            .iter()
            .map(|(name, bytes, partial)| {
                write_atomic(dir, name, bytes)?;
                Ok(OutputRecord { file: name.clone(), sha256: sha256_hex(bytes), partial: *partial })
            })
            .collect()
    }
}
