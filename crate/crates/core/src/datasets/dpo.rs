use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{parse_lines, sidecar_path, write_file, write_json, DatasetError, TrainerHints};
use crate::backends::{ChatClient, ChatMessage, ChatRequest, Evaluator};
use crate::scores::{MetricId, ScoreVector};
use crate::templates::{dialog_template, DialogTemplate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DpoConfig {
    /// Candidates sampled per source.
    pub k: usize,
    /// Minimum summed-score gap between chosen and rejected (exclusive).
    pub margin: f64,
    /// Extra samples allowed to replace duplicates.
    pub resample_budget: usize,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub template: String,
    /// Metrics summed for best/worst; `None` uses every scored metric.
    pub metrics: Option<Vec<MetricId>>,
    /// Recorded in the sidecar for the external trainer.
    pub beta: f64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self {
            k: 5,
            margin: 0.05,
            resample_budget: 5,
            model: "prompt-refiner".into(),
            temperature: 0.9,
            max_tokens: 1024,
            template: "refine-v1".into(),
            metrics: None,
            beta: 0.1,
        }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<&'static DialogTemplate, DatasetError> {
        let bad = |m: String| Err(DatasetError::InvalidConfig(m));
        if self.k < 2 {
            return bad(format!("k must be >= 2, got {}", self.k));
        }
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return bad(format!("margin must be finite and >= 0, got {}", self.margin));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return bad(format!("beta must be > 0, got {}", self.beta));
        }
        if matches!(&self.metrics, Some(m) if m.is_empty()) {
            return bad("metrics override is empty".into());
        }
        dialog_template(&self.template)
            .ok_or_else(|| DatasetError::InvalidConfig(format!("unknown template {:?}", self.template)))
    }

    fn summed(&self, scores: &ScoreVector) -> Option<f64> {
        match &self.metrics {
            None => Some(scores.normalized().values().sum()),
            Some(ms) => ms.iter().map(|m| scores.norm_value(m)).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoTriplet {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub chosen_overall: f64,
    pub rejected_overall: f64,
    pub round: u32,
    pub chosen_scores: ScoreVector,
    pub rejected_scores: ScoreVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum SkipReason {
    TooFewDistinct { found: usize },
    TooFewScored { found: usize },
    MarginNotMet { spread: f64 },
    Backend { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoSkip {
    pub prompt: String,
    #[serde(flatten)]
    pub reason: SkipReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoRound {
    pub round: u32,
    pub sources: usize,
    pub triplets: Vec<DpoTriplet>,
    pub skipped: Vec<DpoSkip>,
}

impl DpoRound {
    pub fn backend_failures(&self) -> usize {
        self.skipped.iter().filter(|s| matches!(s.reason, SkipReason::Backend { .. })).count()
    }
}

/// Index of the best and worst candidate, or `None` when the spread is not
/// above `margin`. Ties resolve to the earliest index.
pub fn select_pair(overalls: &[f64], margin: f64) -> Option<(usize, usize)> {
    if overalls.len() < 2 {
        return None;
    }
    let (mut best, mut worst) = (0, 0);
    for (i, v) in overalls.iter().enumerate() {
        if *v > overalls[best] {
            best = i;
        }
        if *v < overalls[worst] {
            worst = i;
        }
    }
    (overalls[best] - overalls[worst] > margin).then_some((best, worst))
}

/// Up to `k` distinct candidates, drawing at most `k + resample_budget`
/// samples.
fn sample_candidates(
    source: &str,
    model: &dyn ChatClient,
    template: &DialogTemplate,
    cfg: &DpoConfig,
) -> Result<Vec<String>, DatasetError> {
    let messages = vec![ChatMessage::user(template.render(source))];
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for sample in 0..(cfg.k + cfg.resample_budget) {
        if out.len() == cfg.k {
            break;
        }
        let req = ChatRequest::new(cfg.model.clone(), messages.clone())
            .with_temperature(cfg.temperature)
            .with_max_tokens(cfg.max_tokens)
            .with_sample(sample as u32);
        let text = model.chat(&req)?.content.trim().to_string();
        if !text.is_empty() && seen.insert(text.clone()) {
            out.push(text);
        }
    }
    Ok(out)
}

fn triplet_for(
    source: &str,
    model: &dyn ChatClient,
    evaluator: &Evaluator,
    template: &DialogTemplate,
    cfg: &DpoConfig,
    round: u32,
) -> Result<DpoTriplet, SkipReason> {
    let backend = |e: DatasetError| SkipReason::Backend { error: e.to_string() };
    let texts = sample_candidates(source, model, template, cfg).map_err(backend)?;
    if texts.len() < 2 {
        return Err(SkipReason::TooFewDistinct { found: texts.len() });
    }
    let mut scored: Vec<(String, ScoreVector, f64)> = Vec::new();
    let mut last_error = None;
    for (text, result) in texts.iter().zip(evaluator.evaluate_many(&texts)) {
        match result {
            Ok(eval) => {
                let sum = cfg.summed(&eval.scores).ok_or_else(|| SkipReason::Backend {
                    error: "scores lack a configured metric".into(),
                })?;
                scored.push((text.clone(), eval.scores, sum));
            }
            Err(e) => last_error = Some(e.to_string()),
        }
    }
    if scored.len() < 2 {
        return Err(match last_error {
            Some(error) => SkipReason::Backend { error },
            None => SkipReason::TooFewScored { found: scored.len() },
        });
    }
    let overalls: Vec<f64> = scored.iter().map(|s| s.2).collect();
    let (best, worst) = select_pair(&overalls, cfg.margin).ok_or_else(|| {
        let max = overalls.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = overalls.iter().cloned().fold(f64::INFINITY, f64::min);
        SkipReason::MarginNotMet { spread: max - min }
    })?;
    let (chosen, chosen_scores, chosen_overall) = scored[best].clone();
    let (rejected, rejected_scores, rejected_overall) = scored[worst].clone();
    Ok(DpoTriplet {
        prompt: source.to_string(),
        chosen,
        rejected,
        chosen_overall,
        rejected_overall,
        round,
        chosen_scores,
        rejected_scores,
    })
}

/// Samples `k` refinements per source from `model`, scores them, and keeps
/// (best, worst) when their gap exceeds the margin. Sources run in parallel;
/// output keeps input order.
pub fn build_dpo_round(
    sources: &[String],
    model: &dyn ChatClient,
    evaluator: &Evaluator,
    cfg: &DpoConfig,
    round: u32,
) -> Result<DpoRound, DatasetError> {
    let template = cfg.validate()?;
    if let Some(ms) = &cfg.metrics {
        evaluator.scorers().require_metrics(ms)?;
    }
    let results: Vec<Result<DpoTriplet, DpoSkip>> = sources
        .par_iter()
        .map(|source| {
            let source = source.trim();
            triplet_for(source, model, evaluator, template, cfg, round).map_err(|reason| {
                tracing::info!(prompt = %source, ?reason, "source skipped");
                DpoSkip { prompt: source.to_string(), reason }
            })
        })
        .collect();
    let mut out = DpoRound { round, sources: sources.len(), triplets: Vec::new(), skipped: Vec::new() };
    for r in results {
        match r {
            Ok(t) => out.triplets.push(t),
            Err(s) => out.skipped.push(s),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DpoRoundPlan {
    pub round: u32,
    /// Model that samples candidates: `sft` for round 1, then `dpo-<r-1>`.
    pub sample_from: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DpoSchedule {
    pub rounds: Vec<DpoRoundPlan>,
}

impl DpoSchedule {
    pub fn round(&self, r: u32) -> Option<&DpoRoundPlan> {
        self.rounds.iter().find(|p| p.round == r)
    }
}

pub fn plan_dpo_iterations(rounds: u32) -> Result<DpoSchedule, DatasetError> {
    if rounds < 1 {
        return Err(DatasetError::InvalidConfig("dpo rounds must be >= 1".into()));
    }
    Ok(DpoSchedule {
        rounds: (1..=rounds)
            .map(|round| DpoRoundPlan {
                round,
                sample_from: if round == 1 { "sft".into() } else { format!("dpo-{}", round - 1) },
            })
            .collect(),
    })
}

/// One line of DPO JSONL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DpoRecord {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
}

pub fn dpo_jsonl(triplets: &[DpoTriplet]) -> String {
    let mut out = String::new();
    for t in triplets {
        let rec = DpoRecord { prompt: t.prompt.clone(), chosen: t.chosen.clone(), rejected: t.rejected.clone() };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_dpo_jsonl(text: &str) -> Result<Vec<DpoRecord>, DatasetError> {
    parse_lines(text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletMeta {
    pub prompt: String,
    pub chosen_overall: f64,
    pub rejected_overall: f64,
    pub margin: f64,
    pub chosen_scores: BTreeMap<MetricId, f64>,
    pub rejected_scores: BTreeMap<MetricId, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoSidecar {
    pub kind: String,
    pub round: u32,
    pub sample_from: String,
    pub k: usize,
    pub margin: f64,
    pub sources: usize,
    pub count: usize,
    pub skipped: Vec<DpoSkip>,
    pub trainer: TrainerHints,
    pub triplets: Vec<TripletMeta>,
}

/// Writes the JSONL file and its `.meta.json` sidecar.
pub fn emit_dpo_jsonl(
    result: &DpoRound,
    plan: &DpoRoundPlan,
    cfg: &DpoConfig,
    path: &Path,
) -> Result<(), DatasetError> {
    write_file(path, dpo_jsonl(&result.triplets).as_bytes())?;
    let triplets = result
        .triplets
        .iter()
        .map(|t| TripletMeta {
            prompt: t.prompt.clone(),
            chosen_overall: t.chosen_overall,
            rejected_overall: t.rejected_overall,
            margin: t.chosen_overall - t.rejected_overall,
            chosen_scores: t.chosen_scores.normalized().clone(),
            rejected_scores: t.rejected_scores.normalized().clone(),
        })
        .collect();
    write_json(
        &sidecar_path(path),
        &DpoSidecar {
            kind: "dpo".into(),
            round: result.round,
            sample_from: plan.sample_from.clone(),
            k: cfg.k,
            margin: cfg.margin,
            sources: result.sources,
            count: result.triplets.len(),
            skipped: result.skipped.clone(),
            trainer: TrainerHints::dpo(cfg.beta),
            triplets,
        },
    )
}
