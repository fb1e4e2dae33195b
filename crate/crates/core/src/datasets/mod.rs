//! Training data built from evolution runs and from a fine-tuned refiner:
//! SFT pairs, DPO triplets and negative-prompt records, plus their JSONL
//! writers and sidecar metadata.

mod dpo;
mod negative;
mod sft;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use dpo::{
    build_dpo_round, dpo_jsonl, emit_dpo_jsonl, parse_dpo_jsonl, plan_dpo_iterations, select_pair,
    DpoConfig, DpoRecord, DpoRound, DpoRoundPlan, DpoSchedule, DpoSidecar, DpoSkip, DpoTriplet,
    SkipReason, TripletMeta,
};
pub use negative::{
    make_negative, negative_pairs_jsonl, subject_words, validate_negative, NegativeConfig,
    NegativePromptRecord, NegativeStrategy,
};
pub use sft::{
    build_sft_dataset, emit_sft_jsonl, parse_sft_jsonl, sft_jsonl, sft_line, SftBuild, SftFilter,
    SftPair, SftSidecar, SftSummary,
};

use crate::backends::BackendError;
use crate::digest::write_atomic;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("runs are not finalized: {}", .0.join(", "))]
    NotFinalized(Vec<String>),
    #[error("invalid dataset config: {0}")]
    InvalidConfig(String),
    #[error("negative prompt rejected: {0}")]
    NegativeRejected(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Advisory training settings recorded next to each emitted dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerHints {
    pub method: String,
    pub epochs: u32,
    pub batch_size: u32,
    pub learning_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

impl TrainerHints {
    pub fn sft() -> Self {
        Self { method: "lora-sft".into(), epochs: 14, batch_size: 16, learning_rate: 1e-4, beta: None }
    }

    pub fn dpo(beta: f64) -> Self {
        Self { method: "dpo".into(), epochs: 3, batch_size: 32, learning_rate: 5e-5, beta: Some(beta) }
    }
}

/// `<file>.meta.json` next to `path`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    path.with_file_name(name)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    write_atomic(path, bytes).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("metadata serializes");
    bytes.push(b'\n');
    write_file(path, &bytes)
}

fn parse_lines<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>, DatasetError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| DatasetError::Parse { line: i + 1, reason: e.to_string() })
        })
        .collect()
}
