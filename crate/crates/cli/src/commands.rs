use std::path::{Path, PathBuf};
use std::sync::Mutex;

use pav_core::backends::CallCounts;
use pav_core::datasets::{
    build_dpo_round, build_sft_dataset, emit_dpo_jsonl, emit_sft_jsonl, make_negative, negative_pairs_jsonl,
    plan_dpo_iterations, DatasetError, NegativePromptRecord, NegativeStrategy, SftFilter,
};
use pav_core::digest::write_atomic;
use pav_core::evolution::persist::{PersistError, RunDir};
use pav_core::evolution::{finalize, iteration_report, report_csv, EvolutionError, Evolver};
use pav_core::objectives::{dpo_report, parse_logprob_fixtures};
use pav_core::templates::NEGATIVE_EXEMPLARS;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::AppConfig;
use crate::error::{input, CliError};
use crate::manifest::{RunManifest, RunStatus};
use crate::wiring::{ChatRole, Stack};

/// Nonempty trimmed lines of a UTF-8 file.
pub fn read_lines(path: &Path) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| input(path, e))?;
    let lines: Vec<String> = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
    if lines.is_empty() {
        return Err(input(path, "no prompts"));
    }
    Ok(lines)
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Other(e.to_string()))
}

fn write_out(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_atomic(path, bytes).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
}

fn print_calls(calls: &CallCounts) {
    println!(
        "backend calls: chat={} generate={} score={} total={}",
        calls.chat,
        calls.generate,
        calls.score,
        calls.total()
    );
}

fn dataset_err(e: DatasetError) -> CliError {
    match e {
        DatasetError::InvalidConfig(m) => CliError::Config(m),
        DatasetError::Backend(b) => CliError::Backend(b.to_string()),
        DatasetError::NotFinalized(_) | DatasetError::Parse { .. } => CliError::Input(e.to_string()),
        other => CliError::Other(other.to_string()),
    }
}

#[derive(Debug, Clone)]
pub struct EvolveArgs {
    pub config: Option<PathBuf>,
    pub prompts: PathBuf,
    pub out: PathBuf,
    pub resume: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvolveSummary {
    pub finalized: usize,
    pub failed: usize,
    pub backend_failures: usize,
    pub calls: CallCounts,
}

impl EvolveSummary {
    pub fn into_result(self) -> Result<(), CliError> {
        match (self.failed, self.backend_failures) {
            (0, _) => Ok(()),
            (n, b) if b > 0 => Err(CliError::Backend(format!("{n} runs failed ({b} on backend errors)"))),
            (n, _) => Err(CliError::Other(format!("{n} runs failed"))),
        }
    }
}

enum RunFailure {
    Backend(String),
    Other(String),
}

impl From<EvolutionError> for RunFailure {
    fn from(e: EvolutionError) -> Self {
        match e {
            EvolutionError::Backend(_) | EvolutionError::AllCandidatesFailed { .. } => Self::Backend(e.to_string()),
            other => Self::Other(other.to_string()),
        }
    }
}

impl From<PersistError> for RunFailure {
    fn from(e: PersistError) -> Self {
        Self::Other(e.to_string())
    }
}

fn run_one(evolver: &Evolver, dir: &RunDir, run_id: &str, prompt: &str, hash: &str) -> Result<(), RunFailure> {
    if dir.exists() {
        let stored = dir.read_snapshot()?.config_hash;
        if stored != hash {
            return Err(RunFailure::Other(format!("run {run_id} was created with config {stored}; refusing to resume")));
        }
    }
    // replays persisted iterations through the cache, then continues
    let mut run = evolver.start(run_id, prompt)?;
    dir.save(&run, hash)?;
    while run.iterations_done() < evolver.config().max_iterations {
        evolver.step(&mut run)?;
        dir.save(&run, hash)?;
    }
    run.final_selection = Some(finalize(&run)?);
    dir.save(&run, hash)?;
    Ok(())
}

pub fn evolve(args: &EvolveArgs) -> Result<EvolveSummary, CliError> {
    let cfg = AppConfig::load(args.config.as_deref())?;
    let prompts = read_lines(&args.prompts)?;
    let hash = cfg.run_hash();

    let manifest = match RunManifest::load(&args.out)? {
        Some(_) if !args.resume => {
            return Err(CliError::Input(format!(
                "{} already holds a batch; pass --resume to continue it",
                args.out.display()
            )))
        }
        Some(m) => {
            if m.config_hash != hash {
                return Err(CliError::Config(format!(
                    "config changed since the batch started ({} vs {hash}); refusing to resume",
                    m.config_hash
                )));
            }
            let stored: Vec<&str> = m.runs.iter().map(|r| r.prompt.as_str()).collect();
            if stored != prompts.iter().map(String::as_str).collect::<Vec<_>>() {
                return Err(CliError::Input("prompts differ from the batch being resumed".into()));
            }
            m
        }
        None => RunManifest::new(hash.clone(), &prompts),
    };

    std::fs::create_dir_all(&args.out).map_err(|e| CliError::Other(format!("{}: {e}", args.out.display())))?;
    let workers = cfg.workers;
    let stack = Stack::new(cfg, &args.out.join("cache"));
    let operator = stack.chat(&stack.cfg.backends.operator, ChatRole::Operator, "operator")?;
    let evaluator = stack.evaluator()?;
    let evolver = Evolver::new(&*operator, &evaluator, stack.cfg.evolution.clone(), stack.cfg.operator.clone())
        .map_err(|e| CliError::Config(e.to_string()))?;

    manifest.save(&args.out)?;
    let todo: Vec<(String, String)> = manifest
        .runs
        .iter()
        .filter(|r| r.status != RunStatus::Finalized)
        .map(|r| (r.run_id.clone(), r.prompt.clone()))
        .collect();
    let manifest = Mutex::new(manifest);
    let runs_root = args.out.join("runs");
    let update = |id: &str, status: RunStatus, error: Option<String>| -> Result<(), CliError> {
        let mut m = manifest.lock().expect("manifest lock");
        m.set(id, status, error)?;
        m.save(&args.out)
    };

    let backend_failures = std::sync::atomic::AtomicUsize::new(0);
    let results: Vec<Result<(), CliError>> = pool(workers)?.install(|| {
        todo.par_iter()
            .map(|(id, prompt)| {
                update(id, RunStatus::InProgress, None)?;
                let dir = RunDir::new(&runs_root, id);
                match run_one(&evolver, &dir, id, prompt, &hash) {
                    Ok(()) => update(id, RunStatus::Finalized, None),
                    Err(failure) => {
                        let msg = match failure {
                            RunFailure::Backend(m) => {
                                backend_failures.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                                m
                            }
                            RunFailure::Other(m) => m,
                        };
                        tracing::error!(run = %id, error = %msg, "run failed");
                        update(id, RunStatus::Failed, Some(msg))
                    }
                }
            })
            .collect()
    });
    results.into_iter().collect::<Result<(), _>>()?;

    let m = manifest.into_inner().expect("manifest lock");
    let summary = EvolveSummary {
        finalized: m.count(RunStatus::Finalized),
        failed: m.count(RunStatus::Failed),
        backend_failures: backend_failures.into_inner(),
        calls: stack.stats.snapshot(),
    };
    println!("runs: {} finalized, {} failed", summary.finalized, summary.failed);
    print_calls(&summary.calls);
    Ok(summary)
}

/// Run directories under `path`, or under `path/runs` for a batch directory.
fn run_dirs(path: &Path) -> Result<Vec<RunDir>, CliError> {
    let root = if path.join("runs").is_dir() { path.join("runs") } else { path.to_path_buf() };
    let entries = std::fs::read_dir(&root).map_err(|e| input(&root, e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("config.json").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(input(&root, "no run directories"));
    }
    Ok(dirs.into_iter().map(RunDir::open).collect())
}

pub fn build_sft(runs: &Path, out: &Path, require_threshold: bool) -> Result<(), CliError> {
    let loaded = run_dirs(runs)?
        .iter()
        .map(|d| d.load().map_err(|e| CliError::Input(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let build = build_sft_dataset(&loaded, SftFilter { require_threshold }).map_err(dataset_err)?;
    emit_sft_jsonl(&build.pairs, &build.summary, out).map_err(dataset_err)?;
    let s = &build.summary;
    println!(
        "sft pairs: {} of {} runs ({} below threshold, {} unchanged)",
        s.emitted, s.runs, s.below_threshold, s.unchanged
    );
    Ok(())
}

#[derive(Debug, Clone)]
pub struct BuildDpoArgs {
    pub config: Option<PathBuf>,
    pub sources: PathBuf,
    pub round: u32,
    pub out: PathBuf,
}

pub fn build_dpo(args: &BuildDpoArgs) -> Result<(), CliError> {
    let cfg = AppConfig::load(args.config.as_deref())?;
    let schedule = plan_dpo_iterations(cfg.dpo.rounds).map_err(dataset_err)?;
    let plan = schedule.round(args.round).cloned().ok_or_else(|| {
        CliError::Input(format!("round {} is outside the configured {} rounds", args.round, cfg.dpo.rounds))
    })?;
    let sources = read_lines(&args.sources)?;
    let out_dir = args.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::Other(format!("{}: {e}", out_dir.display())))?;

    let workers = cfg.workers;
    let stack = Stack::new(cfg, &out_dir.join("cache"));
    let backend = stack.cfg.dpo.models.get(&plan.sample_from).unwrap_or(&stack.cfg.backends.refiner);
    let model = stack.chat(backend, ChatRole::Refiner, &plan.sample_from)?;
    let evaluator = stack.evaluator()?;
    let dpo_cfg = stack.cfg.dpo.to_config();

    let result = pool(workers)?
        .install(|| build_dpo_round(&sources, &*model, &evaluator, &dpo_cfg, plan.round))
        .map_err(dataset_err)?;
    emit_dpo_jsonl(&result, &plan, &dpo_cfg, &args.out).map_err(dataset_err)?;
    let mut schedule_json = serde_json::to_vec_pretty(&schedule).expect("schedule serializes");
    schedule_json.push(b'\n');
    write_out(&out_dir.join("dpo_schedule.json"), &schedule_json)?;

    println!(
        "round {} (sample from {}): {} triplets from {} sources, {} skipped",
        plan.round,
        plan.sample_from,
        result.triplets.len(),
        result.sources,
        result.skipped.len()
    );
    print_calls(&stack.stats.snapshot());
    match result.backend_failures() {
        0 => Ok(()),
        n => Err(CliError::Backend(format!("{n} sources failed on backend errors"))),
    }
}

pub fn report(run: &Path) -> Result<String, CliError> {
    let dir = RunDir::open(run);
    if !dir.exists() {
        return Err(input(run, "not a run directory"));
    }
    let loaded = dir.load().map_err(|e| CliError::Input(e.to_string()))?;
    let csv = report_csv(&iteration_report(&loaded));
    write_out(&dir.report_path(), csv.as_bytes())?;
    print!("{csv}");
    Ok(csv)
}

pub fn dpo_loss(fixtures: &Path, beta: f64, out: Option<&Path>) -> Result<(), CliError> {
    let text = std::fs::read_to_string(fixtures).map_err(|e| input(fixtures, e))?;
    let records = parse_logprob_fixtures(&text).map_err(|e| input(fixtures, e))?;
    let rep = dpo_report(&records, beta).map_err(|e| input(fixtures, e))?;
    let json = serde_json::to_string_pretty(&rep).expect("report serializes");
    println!("{json}");
    if let Some(out) = out {
        write_out(out, format!("{json}\n").as_bytes())?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct NegativesArgs {
    pub config: Option<PathBuf>,
    pub prompts: PathBuf,
    pub out: PathBuf,
    pub strategy: Option<NegativeStrategy>,
    /// For `tuned_pair`: where to write the curated pairs as training JSONL.
    pub training_out: Option<PathBuf>,
}

#[derive(Deserialize)]
struct Shot {
    positive: String,
    negative: String,
}

fn few_shots(path: Option<&Path>) -> Result<Vec<(String, String)>, CliError> {
    match path {
        None => Ok(NEGATIVE_EXEMPLARS.iter().map(|(p, n)| (p.to_string(), n.to_string())).collect()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| input(p, e))?;
            text.lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| serde_json::from_str::<Shot>(l).map(|s| (s.positive, s.negative)).map_err(|e| input(p, e)))
                .collect()
        }
    }
}

pub fn make_negatives(args: &NegativesArgs) -> Result<(), CliError> {
    let cfg = AppConfig::load(args.config.as_deref())?;
    let strategy = args.strategy.unwrap_or(cfg.negatives.strategy);
    let prompts = read_lines(&args.prompts)?;
    let shots = few_shots(cfg.negatives.few_shots.as_deref())?;
    let out_dir = args.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let workers = cfg.workers;
    let neg_cfg = cfg.negatives.to_config();
    let stack = Stack::new(cfg, &out_dir.join("cache"));
    let client = match strategy {
        NegativeStrategy::Fixed => None,
        _ => Some(stack.chat(&stack.cfg.backends.negative, ChatRole::Negative, "negative")?),
    };

    let results: Vec<Result<NegativePromptRecord, DatasetError>> = pool(workers)?.install(|| {
        prompts
            .par_iter()
            .map(|p| make_negative(p, strategy, client.as_deref(), &shots, &neg_cfg))
            .collect()
    });
    let mut lines = String::new();
    let (mut rejected, mut backend) = (0, 0);
    for r in results {
        match r {
            Ok(rec) => {
                lines.push_str(&serde_json::to_string(&rec).expect("record serializes"));
                lines.push('\n');
            }
            Err(DatasetError::Backend(e)) => {
                tracing::error!(error = %e, "negative prompt failed");
                backend += 1;
            }
            Err(DatasetError::InvalidConfig(m)) => return Err(CliError::Config(m)),
            Err(e) => {
                tracing::error!(error = %e, "negative prompt failed");
                rejected += 1;
            }
        }
    }
    write_out(&args.out, lines.as_bytes())?;
    if let (NegativeStrategy::TunedPair, Some(path)) = (strategy, &args.training_out) {
        write_out(path, negative_pairs_jsonl(&shots).as_bytes())?;
    }
    println!(
        "negatives: {} written, {} rejected, {} backend failures",
        prompts.len() - rejected - backend,
        rejected,
        backend
    );
    print_calls(&stack.stats.snapshot());
    match (backend, rejected) {
        (0, 0) => Ok(()),
        (0, n) => Err(CliError::Other(format!("{n} negative prompts rejected"))),
        (n, _) => Err(CliError::Backend(format!("{n} negative prompts failed on backend errors"))),
    }
}
