//! Builds backend stacks from config.
//!
//! Each client is wrapped, outermost first, as cache → concurrency limit →
//! retry → call counter → transport, so the counters see only calls that
//! actually left the process.

use std::path::Path;
use std::sync::Arc;

use pav_core::backends::http::{HttpChatClient, HttpGenerator, HttpScorer};
use pav_core::backends::mock::{MockGenerator, MockNegativeWriter, MockOperator, MockRefiner, ScriptedChat};
use pav_core::backends::{
    Cache, CachedChat, CallStats, ChatClient, Counted, Evaluator, GenerationSettings, Generator, Limited,
    PreferredVocabulary, Retrying, Scorer, ScorerDescriptor, ScorerSet, SyntheticScorer,
};
use pav_core::digest::seed_from;
use pav_core::fixtures;
use pav_core::scores::MetricScale;
use pav_core::templates::FIXED_NEGATIVE_PROMPT;

use crate::config::{AppConfig, ChatBackend, GeneratorBackend, ScorerBackend};
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChatRole {
    Operator,
    Refiner,
    Negative,
}

/// Shared cache and call counters for one command invocation.
pub struct Stack {
    pub cfg: AppConfig,
    pub cache: Arc<Cache>,
    pub stats: Arc<CallStats>,
}

impl Stack {
    pub fn new(cfg: AppConfig, default_cache_dir: &Path) -> Self {
        let cache = if cfg.cache.enabled {
            Cache::disk(cfg.cache.dir.clone().unwrap_or_else(|| default_cache_dir.to_path_buf()))
        } else {
            Cache::disabled()
        };
        Self { cfg, cache: Arc::new(cache), stats: Arc::new(CallStats::default()) }
    }

    fn role_seed(&self, explicit: Option<u64>, role: &str) -> u64 {
        explicit.unwrap_or_else(|| seed_from([self.cfg.seed.to_le_bytes().as_slice(), role.as_bytes()]))
    }

    pub fn chat(&self, backend: &ChatBackend, role: ChatRole, tag: &str) -> Result<Arc<dyn ChatClient>, CliError> {
        let inner: Arc<dyn ChatClient> = match (backend, role) {
            (ChatBackend::Mock { seed }, ChatRole::Operator) => Arc::new(MockOperator::new(
                self.role_seed(*seed, tag),
                self.cfg.evolution.offspring_per_iteration as usize,
            )),
            (ChatBackend::Mock { seed }, ChatRole::Refiner) => Arc::new(MockRefiner::new(self.role_seed(*seed, tag))),
            (ChatBackend::Mock { seed }, ChatRole::Negative) => {
                Arc::new(MockNegativeWriter::new(self.role_seed(*seed, tag)))
            }
            (ChatBackend::Http { url }, _) => Arc::new(HttpChatClient::from_env(url.clone())),
            (ChatBackend::Scripted { responses }, _) => {
                if responses.is_empty() {
                    return Err(CliError::Config("scripted backend needs at least one response".into()));
                }
                Arc::new(ScriptedChat::new(responses.clone()))
            }
            (ChatBackend::Fixture, ChatRole::Operator) => Arc::new(fixtures::scripted_operator()),
            (ChatBackend::Fixture, _) => {
                return Err(CliError::Config("fixture chat backend is only available to the operator".into()))
            }
        };
        let counted = Counted::new(inner, self.stats.clone());
        let retrying = Retrying::new(counted, self.cfg.retry.clone()).with_stats(self.stats.clone());
        let limited = Limited::new(retrying, self.cfg.limits.chat);
        Ok(Arc::new(CachedChat::new(limited, self.cache.clone())))
    }

    fn wrap_scorer(&self, inner: Arc<dyn Scorer>) -> Arc<dyn Scorer> {
        let counted = Counted::new(inner, self.stats.clone());
        let retrying = Retrying::new(counted, self.cfg.retry.clone()).with_stats(self.stats.clone());
        Arc::new(Limited::new(retrying, self.cfg.limits.score))
    }

    fn descriptor(name: &str, metrics: &[pav_core::MetricId], scales: &Option<Vec<MetricScale>>) -> ScorerDescriptor {
        match scales {
            Some(scales) => ScorerDescriptor {
                name: name.to_string(),
                metrics: metrics.to_vec(),
                endpoint: String::new(),
                scales: scales.clone(),
            },
            None => ScorerDescriptor::with_default_scales(name, metrics.to_vec()),
        }
    }

    pub fn evaluator(&self) -> Result<Evaluator, CliError> {
        let cfg = &self.cfg;
        let generator: Arc<dyn Generator> = match &cfg.backends.generator {
            GeneratorBackend::Mock => Arc::new(MockGenerator::new()),
            GeneratorBackend::Http { url } => Arc::new(HttpGenerator::from_env(url.clone())),
        };
        let generator = Counted::new(generator, self.stats.clone());
        let generator = Retrying::new(generator, cfg.retry.clone()).with_stats(self.stats.clone());
        let generator: Arc<dyn Generator> = Arc::new(Limited::new(generator, cfg.limits.generate));

        let vocabulary = PreferredVocabulary::seeded(cfg.seed, cfg.synthetic.vocabulary_size);
        let mut scorers = Vec::new();
        for backend in &cfg.backends.scorers {
            let inner: Arc<dyn Scorer> = match backend {
                ScorerBackend::Synthetic { name, metrics, scales } => Arc::new(SyntheticScorer::new(
                    Self::descriptor(name, metrics, scales),
                    cfg.seed,
                    vocabulary.clone(),
                )),
                ScorerBackend::Http { name, endpoint, metrics, scales } => {
                    let mut d = Self::descriptor(name, metrics, scales);
                    d.endpoint = endpoint.clone();
                    Arc::new(HttpScorer::from_env(d))
                }
                ScorerBackend::Fixture => Arc::new(fixtures::fixture_scorer()),
            };
            scorers.push(self.wrap_scorer(inner));
        }
        let scorers = ScorerSet::new(scorers).map_err(|e| CliError::Config(e.to_string()))?;

        let negative_prompt = if cfg.generation.fixed_negative {
            Some(FIXED_NEGATIVE_PROMPT.to_string())
        } else {
            cfg.generation.negative_prompt.clone()
        };
        let settings = GenerationSettings { negative_prompt, profile: cfg.generation.profile.clone() };
        let evaluator = Evaluator::new(generator, scorers, self.cache.clone(), settings);
        cfg.evolution
            .thresholds
            .validate(evaluator.scorers().scales())
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(evaluator)
    }
}
