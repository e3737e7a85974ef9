//! Run manifest: config digest, artifact digests, counts and timings.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifacts::{sha256_hex, write_file, Layout};
use crate::error::{RunError, RunResult};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub sha256: String,
    pub bytes: usize,
    /// Line count for text artifacts.
    pub lines: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs: usize,
    pub accuracy: f64,
    pub final_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    /// Cases per dataset split.
    pub counts: BTreeMap<String, usize>,
    /// Keyed by path relative to the output directory.
    pub artifacts: BTreeMap<String, ArtifactEntry>,
    /// Wall-clock milliseconds per stage; the only non-reproducible field.
    pub timings_ms: BTreeMap<String, f64>,
    pub training: Option<TrainingSummary>,
}

impl RunManifest {
    pub fn new(config_digest: String, seed: u64) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("editbench".to_string(), env!("CARGO_PKG_VERSION").to_string());
        versions.insert("schema".to_string(), crate::artifacts::SCHEMA_VERSION.to_string());
        RunManifest { config_digest, seed, versions, ..RunManifest::default() }
    }

    pub fn load(path: &Path) -> RunResult<Option<Self>> {
        match fs::read(path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| RunError::parse(path, e.line(), e)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(RunError::io(path, e)),
        }
    }

    pub fn record(&mut self, layout: &Layout, path: &Path, bytes: &[u8]) {
        let lines = std::str::from_utf8(bytes).ok().map(|t| t.lines().count());
        self.artifacts.insert(
            layout.relative(path),
            ArtifactEntry { sha256: sha256_hex(bytes), bytes: bytes.len(), lines },
        );
    }

    pub fn forget_prefix(&mut self, prefix: &str) {
        self.artifacts.retain(|k, _| !k.starts_with(prefix));
    }

    pub fn save(&self, path: &Path) -> RunResult<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serialises");
        text.push('\n');
        write_file(path, text.as_bytes())
    }
}
