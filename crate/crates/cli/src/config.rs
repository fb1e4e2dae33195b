//! TOML configuration.
//!
//! Every section is optional; an empty file selects offline mock backends
//! with the default evolution and dataset settings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pav_core::backends::RetryPolicy;
use pav_core::datasets::{DpoConfig, NegativeConfig, NegativeStrategy};
use pav_core::digest::hex_digest;
use pav_core::evolution::{EvolutionConfig, OperatorSettings};
use pav_core::scores::{MetricId, MetricScale};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub seed: u64,
    /// Runs (or DPO sources) processed concurrently.
    pub workers: usize,
    pub cache: CacheConfig,
    pub evolution: EvolutionConfig,
    pub operator: OperatorSettings,
    pub retry: RetryPolicy,
    pub limits: Limits,
    pub generation: GenerationConfig,
    pub backends: Backends,
    pub synthetic: SyntheticConfig,
    pub sft: SftConfig,
    pub dpo: DpoSection,
    pub negatives: NegativesConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 4,
            cache: CacheConfig::default(),
            evolution: EvolutionConfig::default(),
            operator: OperatorSettings::default(),
            retry: RetryPolicy::default(),
            limits: Limits::default(),
            generation: GenerationConfig::default(),
            backends: Backends::default(),
            synthetic: SyntheticConfig::default(),
            sft: SftConfig::default(),
            dpo: DpoSection::default(),
            negatives: NegativesConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheConfig {
    pub enabled: bool,
    /// Defaults to `cache/` inside the output directory.
    pub dir: Option<PathBuf>,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self { enabled: true, dir: None }
    }
}

/// Maximum in-flight requests per backend kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Limits {
    pub chat: usize,
    pub generate: usize,
    pub score: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self { chat: 4, generate: 4, score: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub profile: String,
    /// Send the built-in fixed negative prompt with every generation.
    pub fixed_negative: bool,
    pub negative_prompt: Option<String>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self { profile: "default".into(), fixed_negative: false, negative_prompt: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChatBackend {
    /// Seeded offline stand-in appropriate to the role.
    Mock {
        #[serde(default)]
        seed: Option<u64>,
    },
    Http { url: String },
    /// Canned responses replayed in order.
    Scripted { responses: Vec<String> },
    /// Worked-example operator answer (operator role only).
    Fixture,
}

impl Default for ChatBackend {
    fn default() -> Self {
        Self::Mock { seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorBackend {
    Mock,
    Http { url: String },
}

impl Default for GeneratorBackend {
    fn default() -> Self {
        Self::Mock
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScorerBackend {
    Synthetic {
        name: String,
        metrics: Vec<MetricId>,
        #[serde(default)]
        scales: Option<Vec<MetricScale>>,
    },
    Http {
        name: String,
        endpoint: String,
        metrics: Vec<MetricId>,
        #[serde(default)]
        scales: Option<Vec<MetricScale>>,
    },
    /// Identity-scaled scorer over the seven core metrics that returns the
    /// worked-example rows for their prompts.
    Fixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Backends {
    pub operator: ChatBackend,
    pub generator: GeneratorBackend,
    pub scorers: Vec<ScorerBackend>,
    /// Default model sampled by `build-dpo` when `dpo.models` has no entry
    /// for the round.
    pub refiner: ChatBackend,
    pub negative: ChatBackend,
}

impl Default for Backends {
    fn default() -> Self {
        use MetricId::*;
        Self {
            operator: ChatBackend::default(),
            generator: GeneratorBackend::default(),
            scorers: vec![
                ScorerBackend::Synthetic { name: "videoscore".into(), metrics: vec![VQ, TC, DD, TVA, FC], scales: None },
                ScorerBackend::Synthetic { name: "aesthetic".into(), metrics: vec![AES], scales: None },
                ScorerBackend::Synthetic { name: "mps".into(), metrics: vec![MPS], scales: None },
            ],
            refiner: ChatBackend::default(),
            negative: ChatBackend::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub vocabulary_size: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { vocabulary_size: 12 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftConfig {
    pub require_threshold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpoSection {
    pub rounds: u32,
    pub k: usize,
    pub margin: f64,
    pub resample_budget: usize,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub template: String,
    pub metrics: Option<Vec<MetricId>>,
    pub beta: f64,
    /// Sampling backend per schedule entry (`sft`, `dpo-1`, ...).
    pub models: BTreeMap<String, ChatBackend>,
}

impl Default for DpoSection {
    fn default() -> Self {
        let d = DpoConfig::default();
        Self {
            rounds: 2,
            k: d.k,
            margin: d.margin,
            resample_budget: d.resample_budget,
            model: d.model,
            temperature: d.temperature,
            max_tokens: d.max_tokens,
            template: d.template,
            metrics: d.metrics,
            beta: d.beta,
            models: BTreeMap::new(),
        }
    }
}

impl DpoSection {
    pub fn to_config(&self) -> DpoConfig {
        DpoConfig {
            k: self.k,
            margin: self.margin,
            resample_budget: self.resample_budget,
            model: self.model.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            template: self.template.clone(),
            metrics: self.metrics.clone(),
            beta: self.beta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NegativesConfig {
    pub strategy: NegativeStrategy,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// JSONL of `{"positive":…,"negative":…}` exemplars; built-in ones otherwise.
    pub few_shots: Option<PathBuf>,
}

impl Default for NegativesConfig {
    fn default() -> Self {
        let d = NegativeConfig::default();
        Self {
            strategy: NegativeStrategy::Fixed,
            model: d.model,
            temperature: d.temperature,
            max_tokens: d.max_tokens,
            few_shots: None,
        }
    }
}

impl NegativesConfig {
    pub fn to_config(&self) -> NegativeConfig {
        NegativeConfig { model: self.model.clone(), temperature: self.temperature, max_tokens: self.max_tokens }
    }
}

impl AppConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, or returns the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let err = |m: String| Err(CliError::Config(m));
        self.evolution.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.retry.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.workers == 0 {
            return err("workers must be >= 1".into());
        }
        if self.limits.chat == 0 || self.limits.generate == 0 || self.limits.score == 0 {
            return err("limits must be >= 1".into());
        }
        if self.backends.scorers.is_empty() {
            return err("at least one scorer is required".into());
        }
        if self.generation.fixed_negative && self.generation.negative_prompt.is_some() {
            return err("generation.fixed_negative and generation.negative_prompt are exclusive".into());
        }
        if self.dpo.rounds == 0 {
            return err("dpo.rounds must be >= 1".into());
        }
        self.dpo.to_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    /// Hash over everything that influences a run's contents.
    pub fn run_hash(&self) -> String {
        #[derive(Serialize)]
        struct View<'a> {
            seed: u64,
            evolution: &'a EvolutionConfig,
            operator: &'a OperatorSettings,
            generation: &'a GenerationConfig,
            operator_backend: &'a ChatBackend,
            generator: &'a GeneratorBackend,
            scorers: &'a [ScorerBackend],
            synthetic: &'a SyntheticConfig,
        }
        let view = View {
            seed: self.seed,
            evolution: &self.evolution,
            operator: &self.operator,
            generation: &self.generation,
            operator_backend: &self.backends.operator,
            generator: &self.backends.generator,
            scorers: &self.backends.scorers,
            synthetic: &self.synthetic,
        };
        let json = serde_json::to_string(&view).expect("config serializes");
        hex_digest(["app-config", json.as_str()])
    }
}
