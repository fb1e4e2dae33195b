use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BackendError, Scorer};
use crate::digest::{hex_digest, unit_from};
use crate::scores::{MetricId, MetricScale, ScaleSet, ScoreVector};

/// A configured reward scorer and the metrics it produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerDescriptor {
    pub name: String,
    pub metrics: Vec<MetricId>,
    #[serde(default)]
    pub endpoint: String,
    pub scales: Vec<MetricScale>,
}

impl ScorerDescriptor {
    /// Descriptor whose scales are the defaults for each metric.
    pub fn with_default_scales(name: impl Into<String>, metrics: Vec<MetricId>) -> Self {
        let scales = metrics.iter().cloned().map(MetricScale::default_for).collect();
        Self { name: name.into(), metrics, endpoint: String::new(), scales }
    }

    pub fn with_identity_scales(name: impl Into<String>, metrics: Vec<MetricId>) -> Self {
        let scales = metrics.iter().cloned().map(MetricScale::identity).collect();
        Self { name: name.into(), metrics, endpoint: String::new(), scales }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let cfg = |msg: String| BackendError::Config(format!("scorer {}: {msg}", self.name));
        if self.metrics.is_empty() {
            return Err(cfg("declares no metrics".into()));
        }
        let declared: BTreeSet<_> = self.metrics.iter().collect();
        if declared.len() != self.metrics.len() {
            return Err(cfg("declares a metric twice".into()));
        }
        let scaled: BTreeSet<_> = self.scales.iter().map(|s| &s.metric).collect();
        if declared != scaled {
            return Err(cfg("needs exactly one scale per declared metric".into()));
        }
        for scale in &self.scales {
            scale.validate()?;
        }
        Ok(())
    }

    pub fn scale(&self, metric: &MetricId) -> Option<&MetricScale> {
        self.scales.iter().find(|s| &s.metric == metric)
    }
}

/// The configured scorers, checked to declare disjoint metrics.
#[derive(Clone)]
pub struct ScorerSet {
    scorers: Vec<Arc<dyn Scorer>>,
    scales: ScaleSet,
}

impl std::fmt::Debug for ScorerSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScorerSet")
            .field("scorers", &self.scorers.iter().map(|s| s.descriptor().name.clone()).collect::<Vec<_>>())
            .finish()
    }
}

impl ScorerSet {
    pub fn new(scorers: Vec<Arc<dyn Scorer>>) -> Result<Self, BackendError> {
        if scorers.is_empty() {
            return Err(BackendError::Config("no scorers configured".into()));
        }
        let mut scales = ScaleSet::default();
        let mut owner: BTreeMap<MetricId, String> = BTreeMap::new();
        for scorer in &scorers {
            let desc = scorer.descriptor();
            desc.validate()?;
            for metric in &desc.metrics {
                if let Some(prev) = owner.insert(metric.clone(), desc.name.clone()) {
                    return Err(BackendError::Config(format!(
                        "metric {metric} is produced by both {prev} and {}",
                        desc.name
                    )));
                }
            }
            for scale in &desc.scales {
                scales.insert(scale.clone())?;
            }
        }
        Ok(Self { scorers, scales })
    }

    /// Fails unless the union of declared metrics equals `required`.
    pub fn require_metrics(&self, required: &[MetricId]) -> Result<(), BackendError> {
        let have: BTreeSet<_> = self.scales.metrics().collect();
        let want: BTreeSet<_> = required.iter().collect();
        if have != want {
            return Err(BackendError::Config(format!(
                "scorers produce {:?} but the metric set is {:?}",
                have.iter().map(|m| m.as_str()).collect::<Vec<_>>(),
                want.iter().map(|m| m.as_str()).collect::<Vec<_>>()
            )));
        }
        Ok(())
    }

    pub fn metric_set(&self) -> Vec<MetricId> {
        self.scales.metrics().cloned().collect()
    }

    pub fn scales(&self) -> &ScaleSet {
        &self.scales
    }

    pub fn scorers(&self) -> &[Arc<dyn Scorer>] {
        &self.scorers
    }

    pub fn fingerprint(&self) -> String {
        let parts: Vec<String> = self.scorers.iter().map(|s| s.fingerprint()).collect();
        let scales = serde_json::to_string(&self.scales).expect("scales serialize");
        hex_digest(parts.iter().map(String::as_bytes).chain([scales.as_bytes()]))
    }

    /// Scores one artifact with every scorer and normalizes the union.
    pub fn assemble(&self, artifact_ref: &str, prompt: &str) -> Result<ScoreVector, BackendError> {
        let mut raw = BTreeMap::new();
        for scorer in &self.scorers {
            let desc = scorer.descriptor();
            let values = scorer.score(artifact_ref, prompt)?;
            for metric in &desc.metrics {
                let value = values.get(metric).ok_or_else(|| BackendError::MalformedScore {
                    scorer: desc.name.clone(),
                    reason: format!("missing metric {metric}"),
                })?;
                if !value.is_finite() {
                    return Err(BackendError::MalformedScore {
                        scorer: desc.name.clone(),
                        reason: format!("non-finite value for {metric}"),
                    });
                }
                raw.insert(metric.clone(), *value);
            }
            if let Some(extra) = values.keys().find(|m| !desc.metrics.contains(m)) {
                return Err(BackendError::MalformedScore {
                    scorer: desc.name.clone(),
                    reason: format!("undeclared metric {extra}"),
                });
            }
        }
        Ok(ScoreVector::from_raw(raw, &self.scales)?)
    }
}

/// Descriptive words the mock operator draws from and the synthetic scorer
/// may prefer.
pub const DESCRIPTOR_POOL: &[&str] = &[
    "serene", "cinematic", "vibrant", "soft", "lighting", "detailed", "smooth", "gentle",
    "tranquil", "golden", "natural", "focused", "sharp", "warm", "dynamic", "steady",
    "elegant", "lush", "crisp", "calm", "glowing", "textured", "ambient", "realistic",
    "graceful", "vivid", "peaceful", "bright", "shallow", "depth", "closeup", "panoramic",
    "slow", "motion", "colorful", "intimate", "atmospheric", "balanced", "clear", "fluid",
];

/// Words a synthetic "generation model" rewards.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferredVocabulary {
    words: BTreeSet<String>,
}

impl PreferredVocabulary {
    pub fn new(words: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            words: words.into_iter().map(|w| w.into().to_lowercase()).collect(),
        }
    }

    /// `size` distinct words from [`DESCRIPTOR_POOL`], chosen by `seed`.
    pub fn seeded(seed: u64, size: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x766f_6361_6275_6c61);
        let size = size.min(DESCRIPTOR_POOL.len());
        let picked = rand::seq::index::sample(&mut rng, DESCRIPTOR_POOL.len(), size);
        Self::new(picked.into_iter().map(|i| DESCRIPTOR_POOL[i]))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }

    pub fn digest(&self) -> String {
        hex_digest(self.words.iter())
    }
}

fn tokens(prompt: &str) -> impl Iterator<Item = String> + '_ {
    prompt
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Deterministic stand-in for a reward model.
///
/// For each metric, the value as a fraction of the raw range is
/// `0.35 + 0.30·u + step·c`, capped at 1, where `u ∈ [0, 1)` is a seeded hash
/// of the prompt's non-preferred tokens, `c` counts the distinct preferred
/// words present, and `step ∈ [0.02, 0.05)` is a seeded per-metric weight.
/// Adding a preferred word leaves `u` unchanged and never lowers `c`, so no
/// metric decreases.
pub fn synthetic_scores<'a>(
    prompt: &str,
    seed: u64,
    vocabulary: &PreferredVocabulary,
    scales: impl IntoIterator<Item = &'a MetricScale>,
) -> BTreeMap<MetricId, f64> {
    let mut core = Vec::new();
    let mut preferred = BTreeSet::new();
    for token in tokens(prompt) {
        if vocabulary.contains(&token) {
            preferred.insert(token);
        } else {
            core.push(token);
        }
    }
    let core = core.join(" ");
    let seed_bytes = seed.to_le_bytes();
    let count = preferred.len() as f64;
    scales
        .into_iter()
        .map(|scale| {
            let name = scale.metric.as_str().as_bytes();
            let u = unit_from([&b"base"[..], &seed_bytes, name, core.as_bytes()]);
            let step = 0.02 + 0.03 * unit_from([&b"bonus"[..], &seed_bytes, name]);
            let frac = (0.35 + 0.30 * u + step * count).min(1.0);
            let value = scale.raw_min + (scale.raw_max - scale.raw_min) * frac;
            (scale.metric.clone(), value.clamp(scale.raw_min, scale.raw_max))
        })
        .collect()
}

/// Offline scorer: [`synthetic_scores`] unless a fixture row exists for the prompt.
#[derive(Debug, Clone)]
pub struct SyntheticScorer {
    descriptor: ScorerDescriptor,
    seed: u64,
    vocabulary: PreferredVocabulary,
    fixture: HashMap<String, BTreeMap<MetricId, f64>>,
}

impl SyntheticScorer {
    pub fn new(descriptor: ScorerDescriptor, seed: u64, vocabulary: PreferredVocabulary) -> Self {
        Self { descriptor, seed, vocabulary, fixture: HashMap::new() }
    }

    /// Rows keyed by exact (trimmed) prompt text override the formula.
    pub fn with_fixture(mut self, rows: impl IntoIterator<Item = (String, BTreeMap<MetricId, f64>)>) -> Self {
        self.fixture
            .extend(rows.into_iter().map(|(p, row)| (p.trim().to_string(), row)));
        self
    }

    pub fn vocabulary(&self) -> &PreferredVocabulary {
        &self.vocabulary
    }

    fn fixture_digest(&self) -> String {
        let mut rows: Vec<_> = self.fixture.iter().collect();
        rows.sort_by(|a, b| a.0.cmp(b.0));
        hex_digest(rows.iter().map(|(p, row)| {
            format!("{p}\u{1f}{}", serde_json::to_string(row).expect("rows serialize"))
        }))
    }
}

impl Scorer for SyntheticScorer {
    fn descriptor(&self) -> &ScorerDescriptor {
        &self.descriptor
    }

    fn score(&self, artifact_ref: &str, prompt: &str) -> Result<BTreeMap<MetricId, f64>, BackendError> {
        if artifact_ref.is_empty() {
            return Err(BackendError::InvalidRequest("empty artifact reference".into()));
        }
        if let Some(row) = self.fixture.get(prompt.trim()) {
            return self
                .descriptor
                .metrics
                .iter()
                .map(|m| {
                    row.get(m).map(|v| (m.clone(), *v)).ok_or_else(|| BackendError::MalformedScore {
                        scorer: self.descriptor.name.clone(),
                        reason: format!("fixture row lacks {m}"),
                    })
                })
                .collect();
        }
        Ok(synthetic_scores(prompt, self.seed, &self.vocabulary, &self.descriptor.scales))
    }

    fn fingerprint(&self) -> String {
        format!(
            "synthetic:{}:{}:{}:{}",
            self.descriptor.name,
            self.seed,
            self.vocabulary.digest(),
            self.fixture_digest()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn videoscore() -> ScorerDescriptor {
        ScorerDescriptor::with_default_scales(
            "videoscore",
            vec![MetricId::VQ, MetricId::TC, MetricId::DD, MetricId::TVA, MetricId::FC],
        )
    }

    fn three_scorers(seed: u64) -> Vec<Arc<dyn Scorer>> {
        let vocab = PreferredVocabulary::seeded(seed, 10);
        vec![
            Arc::new(SyntheticScorer::new(videoscore(), seed, vocab.clone())),
            Arc::new(SyntheticScorer::new(
                ScorerDescriptor::with_default_scales("aesthetic", vec![MetricId::AES]),
                seed,
                vocab.clone(),
            )),
            Arc::new(SyntheticScorer::new(
                ScorerDescriptor::with_default_scales("mps", vec![MetricId::MPS]),
                seed,
                vocab,
            )),
        ]
    }

    #[test]
    fn union_of_three_is_complete() {
        let set = ScorerSet::new(three_scorers(3)).unwrap();
        set.require_metrics(&MetricId::CORE).unwrap();
        let sv = set.assemble("mock://x", "a cat on a sofa").unwrap();
        assert_eq!(sv.metric_set(), MetricId::CORE.to_vec());
    }

    #[test]
    fn overlapping_scorers_rejected() {
        let vocab = PreferredVocabulary::seeded(1, 5);
        let a: Arc<dyn Scorer> = Arc::new(SyntheticScorer::new(videoscore(), 1, vocab.clone()));
        let b: Arc<dyn Scorer> = Arc::new(SyntheticScorer::new(
            ScorerDescriptor::with_default_scales("dup", vec![MetricId::TVA]),
            1,
            vocab,
        ));
        assert!(matches!(ScorerSet::new(vec![a, b]), Err(BackendError::Config(_))));
    }

    #[test]
    fn coverage_mismatch_rejected() {
        let set = ScorerSet::new(three_scorers(3)[..2].to_vec()).unwrap();
        assert!(set.require_metrics(&MetricId::CORE).is_err());
    }

    #[test]
    fn fixture_overrides_formula() {
        let row: BTreeMap<_, _> = MetricId::CORE.iter().cloned().zip([2.47, 2.66, 2.84, 2.77, 2.48, 3.34, 2.7]).collect();
        let scorer = SyntheticScorer::new(
            ScorerDescriptor::with_identity_scales("fixture", MetricId::CORE.to_vec()),
            0,
            PreferredVocabulary::new(Vec::<String>::new()),
        )
        .with_fixture([("Attractive blonde woman".to_string(), row.clone())]);
        assert_eq!(scorer.score("mock://a", "Attractive blonde woman").unwrap(), row);
    }

    #[test]
    fn missing_metric_is_malformed() {
        struct Partial(ScorerDescriptor);
        impl Scorer for Partial {
            fn descriptor(&self) -> &ScorerDescriptor {
                &self.0
            }
            fn score(&self, _: &str, _: &str) -> Result<BTreeMap<MetricId, f64>, BackendError> {
                Ok([(MetricId::VQ, 2.0)].into_iter().collect())
            }
            fn fingerprint(&self) -> String {
                "partial".into()
            }
        }
        let set = ScorerSet::new(vec![Arc::new(Partial(videoscore()))]).unwrap();
        assert!(matches!(
            set.assemble("mock://a", "p"),
            Err(BackendError::MalformedScore { .. })
        ));
    }

    #[test]
    fn no_preferred_words_gives_base_values() {
        let vocab = PreferredVocabulary::new(["zzz"]);
        let scales = videoscore().scales;
        let s = synthetic_scores("a dog runs", 5, &vocab, &scales);
        for scale in &scales {
            let name = scale.metric.as_str().as_bytes();
            let u = unit_from([&b"base"[..], &5u64.to_le_bytes(), name, b"a dog runs"]);
            let expected = scale.raw_min + (scale.raw_max - scale.raw_min) * (0.35 + 0.30 * u);
            assert_eq!(s[&scale.metric], expected);
        }
    }

    #[test]
    fn one_preferred_word_never_lowers_scores() {
        let vocab = PreferredVocabulary::new(["serene"]);
        let scales = videoscore().scales;
        let base = synthetic_scores("a dog runs", 9, &vocab, &scales);
        let more = synthetic_scores("a serene dog runs", 9, &vocab, &scales);
        for m in base.keys() {
            assert!(more[m] > base[m]);
        }
    }

    #[test]
    fn seeded_vocabulary_is_stable() {
        assert_eq!(PreferredVocabulary::seeded(7, 8), PreferredVocabulary::seeded(7, 8));
        assert_eq!(PreferredVocabulary::seeded(7, 8).words().count(), 8);
    }
}
