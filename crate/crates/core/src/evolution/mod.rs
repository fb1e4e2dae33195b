//! Reward-guided prompt evolution.
//!
//! A run starts from one source prompt (candidate id 0) and repeats:
//!
//! 1. render the source plus the current population, with scores, into an
//!    operator prompt and ask the LLM operator for new prompts;
//! 2. evaluate the offspring (generate, then score);
//! 3. merge offspring with the population and keep the top N.
//!
//! After the last iteration, [`finalize`] picks the best threshold-passing
//! candidate from the whole history.

mod operator;
pub mod persist;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

pub use operator::{
    extract_prompts, parse_operator_response, render_operator_prompt, OperatorExchange,
    OperatorPrompt, ParseError,
};

use crate::backends::{BackendError, ChatClient, ChatRequest, Evaluator};
use crate::scores::{
    overall, passes_thresholds, rank, select_top_n_with, Fallback, MetricId, ScoreError,
    ScoreVector, SelectionRule, ThresholdPolicy,
};
use crate::templates::{operator_template, OperatorTemplate};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvolutionError {
    #[error("invalid evolution config: {0}")]
    InvalidConfig(String),
    #[error("candidate {0} has not been scored")]
    Unscored(u32),
    #[error("run is already finalized")]
    AlreadyFinalized,
    #[error("run has reached max_iterations ({0})")]
    IterationLimit(u32),
    #[error("run history is empty")]
    EmptyHistory,
    #[error("every candidate of iteration {iteration} failed: {cause}")]
    AllCandidatesFailed { iteration: u32, cause: String },
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Original,
    Evolved { iteration: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptCandidate {
    pub id: u32,
    pub text: String,
    pub provenance: Provenance,
    pub artifact_ref: Option<String>,
    pub scores: Option<ScoreVector>,
    /// Set when evaluation failed; such candidates never enter selection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl PromptCandidate {
    pub fn original(text: impl Into<String>) -> Self {
        Self::new(0, text, Provenance::Original)
    }

    pub fn new(id: u32, text: impl Into<String>, provenance: Provenance) -> Self {
        Self {
            id,
            text: text.into(),
            provenance,
            artifact_ref: None,
            scores: None,
            failure: None,
        }
    }

    pub fn with_scores(mut self, scores: ScoreVector) -> Self {
        self.scores = Some(scores);
        self
    }

    pub fn is_scored(&self) -> bool {
        self.scores.is_some()
    }

    pub fn overall(&self) -> Option<f64> {
        self.scores.as_ref().and_then(|s| overall(s).ok())
    }
}

/// Settings for the chat request sent to the operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OperatorSettings {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for OperatorSettings {
    fn default() -> Self {
        Self { model: "gpt-4o".into(), temperature: 1.0, max_tokens: 2048 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolutionConfig {
    pub max_iterations: u32,
    pub offspring_per_iteration: u32,
    pub top_n: u32,
    pub thresholds: ThresholdPolicy,
    pub operator_instruction: String,
    pub parse_retries: u32,
    pub selection: SelectionRule,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            max_iterations: 4,
            offspring_per_iteration: 3,
            top_n: 3,
            thresholds: ThresholdPolicy::default(),
            operator_instruction: "evolution-v1".into(),
            parse_retries: 2,
            selection: SelectionRule::Sum,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<(), EvolutionError> {
        let bad = |msg: &str| Err(EvolutionError::InvalidConfig(msg.into()));
        if self.max_iterations < 1 {
            return bad("max_iterations must be >= 1");
        }
        if self.offspring_per_iteration < 1 {
            return bad("offspring_per_iteration must be >= 1");
        }
        if self.top_n < 1 {
            return bad("top_n must be >= 1");
        }
        if self.template().is_none() {
            return Err(EvolutionError::InvalidConfig(format!(
                "unknown operator_instruction {:?}",
                self.operator_instruction
            )));
        }
        Ok(())
    }

    pub fn template(&self) -> Option<&'static OperatorTemplate> {
        operator_template(&self.operator_instruction)
    }
}

/// Everything that happened in one iteration. Iteration 0 holds the
/// evaluated source prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    pub candidates: Vec<PromptCandidate>,
    #[serde(default)]
    pub exchanges: Vec<OperatorExchange>,
    /// Survivors after selection, in rank order.
    pub population: Vec<u32>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalSelection {
    pub candidate: PromptCandidate,
    pub threshold_met: bool,
    pub overall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionRun {
    pub run_id: String,
    pub config: EvolutionConfig,
    /// Current survivors in rank order.
    pub population: Vec<u32>,
    pub history: Vec<IterationRecord>,
    pub final_selection: Option<FinalSelection>,
    pub skipped_iterations: u32,
}

impl EvolutionRun {
    pub fn source(&self) -> Option<&PromptCandidate> {
        self.history.first().and_then(|r| r.candidates.first())
    }

    /// Completed evolution iterations (excluding the source evaluation).
    pub fn iterations_done(&self) -> u32 {
        self.history.len().saturating_sub(1) as u32
    }

    pub fn candidates(&self) -> impl Iterator<Item = &PromptCandidate> {
        self.history.iter().flat_map(|r| r.candidates.iter())
    }

    pub fn candidate(&self, id: u32) -> Option<&PromptCandidate> {
        self.candidates().find(|c| c.id == id)
    }

    pub fn evaluated(&self) -> impl Iterator<Item = &PromptCandidate> {
        self.candidates().filter(|c| c.is_scored())
    }

    pub fn best_population_overall(&self) -> Option<f64> {
        self.population
            .iter()
            .filter_map(|id| self.candidate(*id)?.overall())
            .max_by(f64::total_cmp)
    }

    fn next_id(&self) -> u32 {
        self.candidates().map(|c| c.id + 1).max().unwrap_or(0)
    }

    pub fn is_finalized(&self) -> bool {
        self.final_selection.is_some()
    }
}

/// Generates and scores each unscored candidate; failures are recorded on
/// the candidate instead of aborting.
pub fn evaluate(candidates: &mut [PromptCandidate], evaluator: &Evaluator) {
    let prompts: Vec<String> = candidates.iter().map(|c| c.text.clone()).collect();
    let results = evaluator.evaluate_many(&prompts);
    for (candidate, result) in candidates.iter_mut().zip(results) {
        match result {
            Ok(eval) => {
                candidate.artifact_ref = Some(eval.artifact_ref);
                candidate.scores = Some(eval.scores);
                candidate.failure = None;
            }
            Err(err) => {
                tracing::warn!(id = candidate.id, error = %err, "candidate evaluation failed");
                candidate.failure = Some(err.to_string());
            }
        }
    }
}

/// Survivors of `pool` under `rule`, as candidate ids in rank order.
pub fn select_population(
    pool: &[&PromptCandidate],
    top_n: u32,
    rule: SelectionRule,
) -> Result<Vec<u32>, EvolutionError> {
    let scored: Vec<(u32, &ScoreVector)> = pool
        .iter()
        .filter_map(|c| c.scores.as_ref().map(|s| (c.id, s)))
        .collect();
    Ok(select_top_n_with(&scored, top_n as usize, rule)?)
}

/// Drives runs against an operator and an evaluator.
pub struct Evolver<'a> {
    operator: &'a dyn ChatClient,
    evaluator: &'a Evaluator,
    config: EvolutionConfig,
    settings: OperatorSettings,
    template: &'static OperatorTemplate,
}

impl<'a> Evolver<'a> {
    pub fn new(
        operator: &'a dyn ChatClient,
        evaluator: &'a Evaluator,
        config: EvolutionConfig,
        settings: OperatorSettings,
    ) -> Result<Self, EvolutionError> {
        config.validate()?;
        config.thresholds.validate(evaluator.scorers().scales())?;
        let template = config.template().expect("validated above");
        Ok(Self { operator, evaluator, config, settings, template })
    }

    pub fn config(&self) -> &EvolutionConfig {
        &self.config
    }

    /// Evaluates the source prompt and returns a run at iteration 0.
    pub fn start(&self, run_id: impl Into<String>, source: &str) -> Result<EvolutionRun, EvolutionError> {
        let mut candidates = vec![PromptCandidate::original(source.trim())];
        evaluate(&mut candidates, self.evaluator);
        if let Some(cause) = &candidates[0].failure {
            return Err(EvolutionError::AllCandidatesFailed { iteration: 0, cause: cause.clone() });
        }
        Ok(EvolutionRun {
            run_id: run_id.into(),
            config: self.config.clone(),
            population: vec![0],
            history: vec![IterationRecord {
                iteration: 0,
                candidates,
                exchanges: Vec::new(),
                population: vec![0],
                warnings: Vec::new(),
            }],
            final_selection: None,
            skipped_iterations: 0,
        })
    }

    fn operator_request(&self, prompt: &OperatorPrompt, sample: u32) -> ChatRequest {
        ChatRequest::new(self.settings.model.clone(), prompt.messages())
            .with_temperature(self.settings.temperature)
            .with_max_tokens(self.settings.max_tokens)
            .with_sample(sample)
    }

    /// Asks the operator for offspring, retrying malformed answers.
    fn request_offspring(
        &self,
        prompt: &OperatorPrompt,
        warnings: &mut Vec<String>,
    ) -> Result<(Vec<String>, Vec<OperatorExchange>), EvolutionError> {
        let expected = self.config.offspring_per_iteration as usize;
        let rendered = prompt.text();
        let mut exchanges = Vec::new();
        for attempt in 0..=self.config.parse_retries {
            let resp = self.operator.chat(&self.operator_request(prompt, attempt))?;
            match parse_operator_response(&resp.content, expected) {
                Ok(parsed) => {
                    exchanges.push(OperatorExchange {
                        rendered_prompt: rendered,
                        raw_response: resp.content,
                        parsed: parsed.clone(),
                    });
                    return Ok((parsed, exchanges));
                }
                Err(err) => {
                    warnings.push(format!("operator attempt {}: {err}", attempt + 1));
                    exchanges.push(OperatorExchange {
                        rendered_prompt: rendered.clone(),
                        raw_response: resp.content,
                        parsed: Vec::new(),
                    });
                }
            }
        }
        // retries exhausted: salvage the attempt with the most usable prompts
        let mut best: Vec<String> = Vec::new();
        for ex in &exchanges {
            let found = extract_prompts(&ex.raw_response);
            if found.len() > best.len() {
                best = found;
            }
        }
        best.truncate(expected);
        Ok((best, exchanges))
    }

    /// One evaluate → select → evolve iteration.
    pub fn step(&self, run: &mut EvolutionRun) -> Result<(), EvolutionError> {
        if run.is_finalized() {
            return Err(EvolutionError::AlreadyFinalized);
        }
        if run.iterations_done() >= self.config.max_iterations {
            return Err(EvolutionError::IterationLimit(self.config.max_iterations));
        }
        let iteration = run.iterations_done() + 1;
        let source = run.source().ok_or(EvolutionError::EmptyHistory)?.clone();
        let selected: Vec<&PromptCandidate> = run
            .population
            .iter()
            .filter(|&&id| id != source.id)
            .filter_map(|&id| run.candidate(id))
            .collect();
        let prompt = render_operator_prompt(
            &source,
            &selected,
            self.template,
            self.config.offspring_per_iteration as usize,
        )?;

        let mut warnings = Vec::new();
        let (texts, exchanges) = self.request_offspring(&prompt, &mut warnings)?;
        if texts.is_empty() {
            warnings.push("no prompts parsed; iteration skipped".into());
            tracing::warn!(run = %run.run_id, iteration, "operator produced no usable prompts");
            run.skipped_iterations += 1;
            let population = run.population.clone();
            run.history.push(IterationRecord {
                iteration,
                candidates: Vec::new(),
                exchanges,
                population,
                warnings,
            });
            return Ok(());
        }

        let mut seen: HashSet<String> = run.candidates().map(|c| c.text.trim().to_string()).collect();
        let mut next_id = run.next_id();
        let mut offspring = Vec::new();
        for text in texts {
            let text = text.trim().to_string();
            if !seen.insert(text.clone()) {
                warnings.push(format!("dropped duplicate offspring {:?}", short(&text)));
                continue;
            }
            offspring.push(PromptCandidate::new(next_id, text, Provenance::Evolved { iteration }));
            next_id += 1;
        }

        evaluate(&mut offspring, self.evaluator);
        if !offspring.is_empty() && offspring.iter().all(|c| c.failure.is_some()) {
            let cause = offspring[0].failure.clone().unwrap_or_default();
            return Err(EvolutionError::AllCandidatesFailed { iteration, cause });
        }

        let mut pool: Vec<&PromptCandidate> =
            run.population.iter().filter_map(|&id| run.candidate(id)).collect();
        pool.extend(offspring.iter().filter(|c| c.is_scored()));
        let population = select_population(&pool, self.config.top_n, self.config.selection)?;

        run.population = population.clone();
        run.history.push(IterationRecord {
            iteration,
            candidates: offspring,
            exchanges,
            population,
            warnings,
        });
        Ok(())
    }

    /// Starts, iterates to `max_iterations`, and finalizes.
    pub fn run(&self, run_id: impl Into<String>, source: &str) -> Result<EvolutionRun, EvolutionError> {
        let mut run = self.start(run_id, source)?;
        while run.iterations_done() < self.config.max_iterations {
            self.step(&mut run)?;
        }
        run.final_selection = Some(finalize(&run)?);
        Ok(run)
    }
}

fn short(text: &str) -> String {
    text.chars().take(48).collect()
}

/// Best threshold-passing candidate over the whole history, or the
/// configured fallback when none passes.
pub fn finalize(run: &EvolutionRun) -> Result<FinalSelection, EvolutionError> {
    let evaluated: Vec<&PromptCandidate> = run.evaluated().collect();
    if evaluated.is_empty() {
        return Err(EvolutionError::EmptyHistory);
    }
    let policy = &run.config.thresholds;
    let best_of = |pool: &[&PromptCandidate]| -> Result<u32, EvolutionError> {
        let scored: Vec<(u32, &ScoreVector)> =
            pool.iter().map(|c| (c.id, c.scores.as_ref().expect("evaluated"))).collect();
        Ok(rank(&scored)?[0])
    };
    let passing: Vec<&PromptCandidate> = evaluated
        .iter()
        .copied()
        .filter(|c| passes_thresholds(c.scores.as_ref().expect("evaluated"), policy))
        .collect();
    let (id, threshold_met) = if !passing.is_empty() {
        (best_of(&passing)?, true)
    } else {
        match policy.fallback {
            Fallback::HighestOverall => (best_of(&evaluated)?, false),
            Fallback::Reject => (run.source().ok_or(EvolutionError::EmptyHistory)?.id, false),
        }
    };
    let candidate = run.candidate(id).expect("id comes from history").clone();
    let overall = candidate.overall().ok_or(EvolutionError::Unscored(id))?;
    Ok(FinalSelection { candidate, threshold_met, overall })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub iteration: u32,
    pub metric: MetricId,
    pub mean: f64,
}

/// Mean normalized score per metric over each iteration's evaluated
/// offspring. Iterations without evaluated offspring produce no rows.
pub fn iteration_report(run: &EvolutionRun) -> Vec<ReportRow> {
    let mut rows = Vec::new();
    for record in run.history.iter().filter(|r| r.iteration > 0) {
        let mut sums: BTreeMap<&MetricId, (f64, usize)> = BTreeMap::new();
        for scores in record.candidates.iter().filter_map(|c| c.scores.as_ref()) {
            for (metric, value) in scores.normalized() {
                let entry = sums.entry(metric).or_insert((0.0, 0));
                entry.0 += value;
                entry.1 += 1;
            }
        }
        rows.extend(sums.into_iter().map(|(metric, (sum, n))| ReportRow {
            iteration: record.iteration,
            metric: metric.clone(),
            mean: sum / n as f64,
        }));
    }
    rows
}

/// `iteration,metric,mean` with a header line.
pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("iteration,metric,mean\n");
    for row in rows {
        out.push_str(&format!("{},{},{}\n", row.iteration, row.metric, row.mean));
    }
    out
}

#[cfg(test)]
mod tests;
