//! Batch manifest: one entry per source prompt with its run status.

use std::path::{Path, PathBuf};

use pav_core::digest::write_atomic;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Pending,
    InProgress,
    Finalized,
    Failed,
}

impl RunStatus {
    /// Allowed moves. A failed run may be picked up again by `--resume`;
    /// nothing leaves `finalized` and nothing returns to `pending`.
    pub fn can_become(self, next: RunStatus) -> bool {
        use RunStatus::*;
        matches!(
            (self, next),
            (Pending, InProgress) | (InProgress, Finalized) | (InProgress, Failed) | (Failed, InProgress)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub run_id: String,
    pub prompt: String,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub runs: Vec<RunEntry>,
}

pub fn run_id(index: usize) -> String {
    format!("run-{index:04}")
}

impl RunManifest {
    pub fn new(config_hash: impl Into<String>, prompts: &[String]) -> Self {
        Self {
            config_hash: config_hash.into(),
            runs: prompts
                .iter()
                .enumerate()
                .map(|(i, p)| RunEntry { run_id: run_id(i), prompt: p.clone(), status: RunStatus::Pending, error: None })
                .collect(),
        }
    }

    pub fn path(out: &Path) -> PathBuf {
        out.join("manifest.json")
    }

    pub fn load(out: &Path) -> Result<Option<Self>, CliError> {
        let path = Self::path(out);
        match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(CliError::Input(format!("{}: {e}", path.display()))),
        }
    }

    pub fn save(&self, out: &Path) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("manifest serializes");
        bytes.push(b'\n');
        let path = Self::path(out);
        write_atomic(&path, &bytes).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
    }

    pub fn set(&mut self, run_id: &str, status: RunStatus, error: Option<String>) -> Result<(), CliError> {
        let entry = self
            .runs
            .iter_mut()
            .find(|r| r.run_id == run_id)
            .ok_or_else(|| CliError::Other(format!("unknown run {run_id}")))?;
        if entry.status != status && !entry.status.can_become(status) {
            return Err(CliError::Other(format!(
                "run {run_id}: illegal status change {:?} -> {status:?}",
                entry.status
            )));
        }
        entry.status = status;
        entry.error = error;
        Ok(())
    }

    pub fn count(&self, status: RunStatus) -> usize {
        self.runs.iter().filter(|r| r.status == status).count()
    }
}
