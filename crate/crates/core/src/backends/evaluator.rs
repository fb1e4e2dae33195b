use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BackendError, Cache, GenerationRequest, GenerationStatus, Generator, ScorerSet};
use crate::digest::hex_digest;
use crate::scores::ScoreVector;

/// Options passed to the generation service with every prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationSettings {
    pub negative_prompt: Option<String>,
    pub profile: String,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self { negative_prompt: None, profile: "default".into() }
    }
}

/// A generated artifact and its assembled, normalized scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub artifact_ref: String,
    pub scores: ScoreVector,
}

/// Generate-then-score, cached by (prompt text, backend fingerprint).
pub struct Evaluator {
    generator: Arc<dyn Generator>,
    scorers: ScorerSet,
    cache: Arc<Cache>,
    settings: GenerationSettings,
}

impl Evaluator {
    pub fn new(
        generator: Arc<dyn Generator>,
        scorers: ScorerSet,
        cache: Arc<Cache>,
        settings: GenerationSettings,
    ) -> Self {
        Self { generator, scorers, cache, settings }
    }

    pub fn scorers(&self) -> &ScorerSet {
        &self.scorers
    }

    pub fn cache(&self) -> &Arc<Cache> {
        &self.cache
    }

    pub fn settings(&self) -> &GenerationSettings {
        &self.settings
    }

    /// Covers the generator, every scorer, the scales and the generation settings.
    pub fn fingerprint(&self) -> String {
        let settings = serde_json::to_string(&self.settings).expect("settings serialize");
        hex_digest([
            self.generator.fingerprint(),
            self.scorers.fingerprint(),
            settings,
        ])
    }

    pub fn cache_key(&self, prompt: &str) -> String {
        Cache::key("eval", [prompt, self.fingerprint().as_str()])
    }

    pub fn evaluate(&self, prompt: &str) -> Result<Evaluation, BackendError> {
        let key = self.cache_key(prompt);
        if let Some(hit) = self.cache.get::<Evaluation>(&key) {
            return Ok(hit);
        }
        let req = GenerationRequest::new(prompt)
            .with_negative(self.settings.negative_prompt.clone())
            .with_profile(self.settings.profile.clone());
        req.validate()?;
        let generated = self.generator.generate(&req)?;
        if generated.status != GenerationStatus::Succeeded || generated.artifact_ref.is_empty() {
            return Err(BackendError::Malformed(format!(
                "generation failed for prompt {:?}",
                truncate(prompt, 60)
            )));
        }
        let scores = self.scorers.assemble(&generated.artifact_ref, prompt)?;
        let evaluation = Evaluation { artifact_ref: generated.artifact_ref, scores };
        if let Err(err) = self.cache.put(&key, &evaluation) {
            tracing::warn!(%err, "failed to write evaluation cache entry");
        }
        Ok(evaluation)
    }

    /// Evaluates prompts concurrently; results keep input order.
    pub fn evaluate_many(&self, prompts: &[String]) -> Vec<Result<Evaluation, BackendError>> {
        prompts.par_iter().map(|p| self.evaluate(p)).collect()
    }
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::MockGenerator;
    use crate::backends::{CallStats, Counted, PreferredVocabulary, Scorer, ScorerDescriptor, SyntheticScorer};
    use crate::scores::MetricId;

    fn evaluator(stats: Arc<CallStats>, cache: Arc<Cache>) -> Evaluator {
        let vocab = PreferredVocabulary::seeded(11, 10);
        let scorers: Vec<Arc<dyn Scorer>> = vec![
            Arc::new(Counted::new(
                SyntheticScorer::new(
                    ScorerDescriptor::with_default_scales(
                        "videoscore",
                        vec![MetricId::VQ, MetricId::TC, MetricId::DD, MetricId::TVA, MetricId::FC],
                    ),
                    11,
                    vocab.clone(),
                ),
                stats.clone(),
            )),
            Arc::new(Counted::new(
                SyntheticScorer::new(
                    ScorerDescriptor::with_default_scales("aes", vec![MetricId::AES]),
                    11,
                    vocab.clone(),
                ),
                stats.clone(),
            )),
            Arc::new(Counted::new(
                SyntheticScorer::new(
                    ScorerDescriptor::with_default_scales("mps", vec![MetricId::MPS]),
                    11,
                    vocab,
                ),
                stats.clone(),
            )),
        ];
        Evaluator::new(
            Arc::new(Counted::new(MockGenerator::new(), stats)),
            ScorerSet::new(scorers).unwrap(),
            cache,
            GenerationSettings::default(),
        )
    }

    #[test]
    fn fresh_candidates_call_each_backend_once() {
        let stats = Arc::new(CallStats::default());
        let ev = evaluator(stats.clone(), Arc::new(Cache::memory()));
        let prompts: Vec<String> = ["a", "b", "c"].iter().map(|s| format!("prompt {s}")).collect();
        let results = ev.evaluate_many(&prompts);
        assert!(results.iter().all(Result::is_ok));
        let c = stats.snapshot();
        assert_eq!((c.generate, c.score), (3, 9));
    }

    #[test]
    fn cached_prompt_makes_no_calls() {
        let stats = Arc::new(CallStats::default());
        let ev = evaluator(stats.clone(), Arc::new(Cache::memory()));
        let first = ev.evaluate("a cat").unwrap();
        let before = stats.snapshot();
        let second = ev.evaluate("a cat").unwrap();
        assert_eq!(first, second);
        assert_eq!(stats.snapshot(), before);
    }

    #[test]
    fn deterministic_without_cache() {
        let a = evaluator(Arc::default(), Arc::new(Cache::disabled())).evaluate("waves at dusk").unwrap();
        let b = evaluator(Arc::default(), Arc::new(Cache::disabled())).evaluate("waves at dusk").unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
