//! On-disk run directories.
//!
//! ```text
//! <root>/<run-id>/config.json          snapshot + config hash
//! <root>/<run-id>/iterations/<k>.jsonl one PromptCandidate per line
//! <root>/<run-id>/iterations/<k>.log.json operator exchanges and warnings
//! <root>/<run-id>/final.json
//! <root>/<run-id>/report.csv
//! ```
//!
//! Files are written once. Rewriting a file with different bytes is refused,
//! since that means the run diverged from what was persisted.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    iteration_report, report_csv, select_population, EvolutionConfig, EvolutionRun, FinalSelection,
    IterationRecord, OperatorExchange, PromptCandidate,
};
use crate::digest::{hex_digest, write_atomic};

#[derive(Debug, thiserror::Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("{path} already exists with different content")]
    Drift { path: PathBuf },
    #[error("run {run_id} was created with config {stored}, current config is {current}")]
    ConfigDrift { run_id: String, stored: String, current: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PersistError + '_ {
    move |source| PersistError::Io { path: path.to_path_buf(), source }
}

/// Contents of `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSnapshot {
    pub run_id: String,
    pub source: String,
    pub config_hash: String,
    pub config: EvolutionConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IterationLog {
    pub exchanges: Vec<OperatorExchange>,
    pub warnings: Vec<String>,
}

/// Hash of any serializable config, over its JSON form.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    hex_digest(["config", json.as_str()])
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(runs_root: impl AsRef<Path>, run_id: &str) -> Self {
        Self { root: runs_root.as_ref().join(run_id) }
    }

    pub fn open(path: impl Into<PathBuf>) -> Self {
        Self { root: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn iteration_path(&self, k: u32) -> PathBuf {
        self.root.join("iterations").join(format!("{k}.jsonl"))
    }

    pub fn iteration_log_path(&self, k: u32) -> PathBuf {
        self.root.join("iterations").join(format!("{k}.log.json"))
    }

    pub fn final_path(&self) -> PathBuf {
        self.root.join("final.json")
    }

    pub fn report_path(&self) -> PathBuf {
        self.root.join("report.csv")
    }

    pub fn exists(&self) -> bool {
        self.config_path().is_file()
    }

    pub fn is_finalized(&self) -> bool {
        self.final_path().is_file()
    }

    fn write_once(&self, path: &Path, bytes: &[u8]) -> Result<(), PersistError> {
        match fs::read(path) {
            Ok(existing) if existing == bytes => Ok(()),
            Ok(_) => Err(PersistError::Drift { path: path.to_path_buf() }),
            Err(e) if e.kind() == io::ErrorKind::NotFound => write_atomic(path, bytes).map_err(io_err(path)),
            Err(e) => Err(io_err(path)(e)),
        }
    }

    fn read_json<T: for<'de> Deserialize<'de>>(&self, path: &Path) -> Result<T, PersistError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| PersistError::Corrupt {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn read_snapshot(&self) -> Result<RunSnapshot, PersistError> {
        self.read_json(&self.config_path())
    }

    /// Writes `config.json`, or checks an existing one against `snapshot`.
    pub fn write_snapshot(&self, snapshot: &RunSnapshot) -> Result<(), PersistError> {
        if self.exists() {
            let stored = self.read_snapshot()?;
            if stored.config_hash != snapshot.config_hash {
                return Err(PersistError::ConfigDrift {
                    run_id: snapshot.run_id.clone(),
                    stored: stored.config_hash,
                    current: snapshot.config_hash.clone(),
                });
            }
        }
        self.write_once(&self.config_path(), &pretty(snapshot))
    }

    pub fn write_iteration(&self, record: &IterationRecord) -> Result<(), PersistError> {
        let mut lines = String::new();
        for c in &record.candidates {
            lines.push_str(&serde_json::to_string(c).expect("candidate serializes"));
            lines.push('\n');
        }
        self.write_once(&self.iteration_path(record.iteration), lines.as_bytes())?;
        let log = IterationLog { exchanges: record.exchanges.clone(), warnings: record.warnings.clone() };
        self.write_once(&self.iteration_log_path(record.iteration), &pretty(&log))
    }

    /// Writes `final.json` and `report.csv` for a finalized run.
    pub fn write_final(&self, run: &EvolutionRun) -> Result<(), PersistError> {
        let fin = run.final_selection.as_ref().ok_or_else(|| PersistError::Corrupt {
            path: self.final_path(),
            reason: "run is not finalized".into(),
        })?;
        self.write_once(&self.final_path(), &pretty(fin))?;
        self.write_once(&self.report_path(), report_csv(&iteration_report(run)).as_bytes())
    }

    /// Persists everything `run` has that is not on disk yet.
    pub fn save(&self, run: &EvolutionRun, config_hash: &str) -> Result<(), PersistError> {
        let source = run.source().map(|c| c.text.clone()).unwrap_or_default();
        self.write_snapshot(&RunSnapshot {
            run_id: run.run_id.clone(),
            source,
            config_hash: config_hash.to_string(),
            config: run.config.clone(),
        })?;
        for record in &run.history {
            self.write_iteration(record)?;
        }
        if run.is_finalized() {
            self.write_final(run)?;
        }
        Ok(())
    }

    pub fn read_iteration(&self, k: u32) -> Result<Option<Vec<PromptCandidate>>, PersistError> {
        let path = self.iteration_path(k);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io_err(&path)(e)),
        };
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, line)| {
                serde_json::from_str(line).map_err(|e| PersistError::Corrupt {
                    path: path.clone(),
                    reason: format!("line {}: {e}", i + 1),
                })
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    pub fn read_final(&self) -> Result<Option<FinalSelection>, PersistError> {
        if !self.is_finalized() {
            return Ok(None);
        }
        self.read_json(&self.final_path()).map(Some)
    }

    /// Rebuilds a run from disk, recomputing each iteration's population by
    /// replaying selection over the stored candidates.
    pub fn load(&self) -> Result<EvolutionRun, PersistError> {
        let snapshot = self.read_snapshot()?;
        let corrupt = |reason: String| PersistError::Corrupt { path: self.root.clone(), reason };
        let mut run = EvolutionRun {
            run_id: snapshot.run_id.clone(),
            config: snapshot.config.clone(),
            population: Vec::new(),
            history: Vec::new(),
            final_selection: None,
            skipped_iterations: 0,
        };
        let mut k = 0;
        while let Some(candidates) = self.read_iteration(k)? {
            let log: IterationLog = if self.iteration_log_path(k).is_file() {
                self.read_json(&self.iteration_log_path(k))?
            } else {
                IterationLog::default()
            };
            let population = if k == 0 {
                if candidates.len() != 1 || candidates[0].id != 0 {
                    return Err(corrupt("iteration 0 must hold exactly the source prompt".into()));
                }
                vec![0]
            } else if candidates.is_empty() {
                run.skipped_iterations += 1;
                run.population.clone()
            } else {
                let mut pool: Vec<&PromptCandidate> =
                    run.population.iter().filter_map(|&id| run.candidate(id)).collect();
                pool.extend(candidates.iter().filter(|c| c.is_scored()));
                select_population(&pool, snapshot.config.top_n, snapshot.config.selection)
                    .map_err(|e| corrupt(e.to_string()))?
            };
            run.population = population.clone();
            run.history.push(IterationRecord {
                iteration: k,
                candidates,
                exchanges: log.exchanges,
                population,
                warnings: log.warnings,
            });
            k += 1;
        }
        if run.history.is_empty() {
            return Err(corrupt("no iterations on disk".into()));
        }
        run.final_selection = self.read_final()?;
        Ok(run)
    }
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("value serializes");
    bytes.push(b'\n');
    bytes
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::backends::Cache;
    use crate::evolution::{Evolver, OperatorSettings};
    use crate::fixtures;
    use crate::scores::{MetricId, ThresholdPolicy};

    fn fixture_run() -> EvolutionRun {
        let operator = fixtures::scripted_operator();
        let evaluator = fixtures::fixture_evaluator(Arc::new(Cache::memory()));
        let cfg = EvolutionConfig {
            max_iterations: 1,
            thresholds: ThresholdPolicy::uniform(MetricId::CORE, 0.0),
            ..EvolutionConfig::default()
        };
        Evolver::new(&operator, &evaluator, cfg, OperatorSettings::default())
            .unwrap()
            .run("spa", fixtures::ORIGINAL)
            .unwrap()
    }

    #[test]
    fn save_then_load_round_trips() {
        let tmp = tempfile::tempdir().unwrap();
        let run = fixture_run();
        let dir = RunDir::new(tmp.path(), &run.run_id);
        let hash = config_hash(&run.config);
        dir.save(&run, &hash).unwrap();
        // idempotent
        dir.save(&run, &hash).unwrap();
        let loaded = dir.load().unwrap();
        assert_eq!(loaded, run);
        let csv = fs::read_to_string(dir.report_path()).unwrap();
        assert!(csv.contains("1,VQ,2.59666"));
    }

    #[test]
    fn drift_is_refused() {
        let tmp = tempfile::tempdir().unwrap();
        let run = fixture_run();
        let dir = RunDir::new(tmp.path(), &run.run_id);
        dir.save(&run, "h1").unwrap();
        assert!(matches!(dir.save(&run, "h2"), Err(PersistError::ConfigDrift { .. })));

        let mut changed = run.history[1].clone();
        changed.candidates[0].text.push('!');
        assert!(matches!(dir.write_iteration(&changed), Err(PersistError::Drift { .. })));
    }

    #[test]
    fn corrupt_iteration_reports_line() {
        let tmp = tempfile::tempdir().unwrap();
        let run = fixture_run();
        let dir = RunDir::new(tmp.path(), &run.run_id);
        dir.save(&run, "h").unwrap();
        fs::write(dir.iteration_path(1), "{not json}\n").unwrap();
        let err = dir.load().unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }
}
