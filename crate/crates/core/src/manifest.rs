//! The run manifest: a single JSON file recording what a run was configured
//! to do, how far it got, and a digest of every artifact it produced. The
//! manifest is what makes runs resumable and auditable — a reader can verify
//! artifact integrity without re-executing anything.
//!
//! The manifest deliberately contains no wall-clock timestamps: replayed
//! runs must be byte-identical, so every field is a pure function of the
//! config and the cassettes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::sha256_hex;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Pending,
    Complete,
    Failed,
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unknown stage: {0}")]
    UnknownStage(String),
    #[error("artifact mismatch: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageEntry {
    pub name: String,
    pub status: StageStatus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    /// Gateway mode the run was started in; a resumed run must match it.
    pub mode: crate::gateway::Mode,
    pub master_seed: u64,
    /// Per-stage seeds derived from the master seed, recorded so a reader
    /// can re-derive any sampled choice without the code.
    pub stage_seeds: BTreeMap<String, u64>,
    /// Full resolved configuration the run started with. Immutable: a
    /// resume under a different config is an error, not a merge.
    pub config: serde_json::Value,
    /// Stage progression in execution order.
    pub stages: Vec<StageEntry>,
    /// Relative path -> sha256 of every artifact in the run directory
    /// (the manifest itself excluded — it cannot contain its own digest).
    pub files: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(
        run_id: &str,
        mode: crate::gateway::Mode,
        master_seed: u64,
        stage_seeds: BTreeMap<String, u64>,
        config: serde_json::Value,
        stage_names: &[&str],
    ) -> Self {
        RunManifest {
            run_id: run_id.to_string(),
            mode,
            master_seed,
            stage_seeds,
            config,
            stages: stage_names
                .iter()
                .map(|name| StageEntry { name: name.to_string(), status: StageStatus::Pending })
                .collect(),
            files: BTreeMap::new(),
        }
    }

    pub fn load(path: &Path) -> Result<RunManifest, ManifestError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Writes the manifest as pretty JSON with a trailing newline. Key
    /// order is fixed by the struct and BTreeMaps, so saves are stable.
    pub fn save(&self, path: &Path) -> Result<(), ManifestError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn status(&self, stage: &str) -> Result<StageStatus, ManifestError> {
        self.stages
            .iter()
            .find(|entry| entry.name == stage)
            .map(|entry| entry.status)
            .ok_or_else(|| ManifestError::UnknownStage(stage.to_string()))
    }

    pub fn set_status(&mut self, stage: &str, status: StageStatus) -> Result<(), ManifestError> {
        let entry = self
            .stages
            .iter_mut()
            .find(|entry| entry.name == stage)
            .ok_or_else(|| ManifestError::UnknownStage(stage.to_string()))?;
        entry.status = status;
        Ok(())
    }

    /// First stage that has not completed, in declared order; `None` when
    /// the whole run is complete.
    pub fn first_incomplete(&self) -> Option<&str> {
        self.stages
            .iter()
            .find(|entry| entry.status != StageStatus::Complete)
            .map(|entry| entry.name.as_str())
    }

    /// Re-walks the run directory and records a digest for every file
    /// except the manifest itself.
    pub fn refresh_inventory(&mut self, run_dir: &Path) -> Result<(), ManifestError> {
        self.files = inventory(run_dir)?;
        Ok(())
    }

    /// Confirms every file in the run directory is listed with a matching
    /// digest and nothing listed is missing.
    pub fn verify_inventory(&self, run_dir: &Path) -> Result<(), ManifestError> {
        let actual = inventory(run_dir)?;
        for (path, digest) in &actual {
            match self.files.get(path) {
                None => {
                    return Err(ManifestError::Mismatch(format!("{path} missing from manifest")))
                }
                Some(listed) if listed != digest => {
                    return Err(ManifestError::Mismatch(format!("{path} digest differs")))
                }
                Some(_) => {}
            }
        }
        for path in self.files.keys() {
            if !actual.contains_key(path) {
                return Err(ManifestError::Mismatch(format!("{path} listed but absent on disk")));
            }
        }
        Ok(())
    }
}

/// Relative forward-slash path -> sha256 for every file under `run_dir`,
/// excluding the manifest.
pub fn inventory(run_dir: &Path) -> Result<BTreeMap<String, String>, ManifestError> {
    let mut files = BTreeMap::new();
    let mut pending: Vec<PathBuf> = vec![run_dir.to_path_buf()];
    while let Some(dir) = pending.pop() {
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_dir() {
                pending.push(path);
            } else {
                let relative = path
                    .strip_prefix(run_dir)
                    .expect("walk stays under run_dir")
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy())
                    .collect::<Vec<_>>()
                    .join("/");
                if relative == MANIFEST_FILE {
                    continue;
                }
                let bytes = std::fs::read(&path)?;
                files.insert(relative, sha256_hex(&bytes));
            }
        }
    }
    Ok(files)
}
