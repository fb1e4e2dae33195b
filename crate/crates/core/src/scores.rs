//! Reward vocabulary: metric identifiers, per-metric scales, normalized
//! score vectors, aggregate scoring, ranking and threshold gating.
//!
//! Every score that reaches selection has been mapped onto a common target
//! interval (by default `[0, 5]`). The aggregate ("overall") score of a
//! candidate is the plain sum of its normalized values.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoreError {
    #[error("no metrics configured")]
    EmptyMetricSet,
    #[error("candidates have heterogeneous metric sets")]
    HeterogeneousMetricSets,
    #[error("invalid scale for {metric}: {reason}")]
    InvalidScale { metric: MetricId, reason: String },
    #[error("invalid metric name {0:?}")]
    InvalidMetricName(String),
    #[error("no scale configured for metric {0}")]
    MissingScale(MetricId),
    #[error("raw and normalized maps disagree on metric set")]
    KeyMismatch,
    #[error("non-finite raw value for {0}")]
    NonFinite(MetricId),
    #[error("threshold for {metric} ({value}) lies outside the target interval")]
    ThresholdOutOfRange { metric: MetricId, value: f64 },
}

/// A reward dimension.
///
/// The seven core metrics have a fixed canonical order, which is also the
/// `Ord` order. Extension metrics sort after all core metrics, by name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricId {
    /// Visual quality.
    VQ,
    /// Temporal consistency.
    TC,
    /// Dynamic degree.
    DD,
    /// Text-video alignment.
    TVA,
    /// Factual consistency.
    FC,
    /// Aesthetic predictor score.
    AES,
    /// Multi-dimensional human preference score.
    MPS,
    /// A configured extra metric (e.g. a CLIP alignment score for images).
    Ext(String),
}

impl MetricId {
    pub const CORE: [MetricId; 7] = [
        MetricId::VQ,
        MetricId::TC,
        MetricId::DD,
        MetricId::TVA,
        MetricId::FC,
        MetricId::AES,
        MetricId::MPS,
    ];

    pub fn as_str(&self) -> &str {
        match self {
            MetricId::VQ => "VQ",
            MetricId::TC => "TC",
            MetricId::DD => "DD",
            MetricId::TVA => "TVA",
            MetricId::FC => "FC",
            MetricId::AES => "AES",
            MetricId::MPS => "MPS",
            MetricId::Ext(name) => name,
        }
    }

    pub fn is_core(&self) -> bool {
        !matches!(self, MetricId::Ext(_))
    }

    /// Builds an extension metric, rejecting empty names and core names.
    pub fn extension(name: impl Into<String>) -> Result<Self, ScoreError> {
        let name = name.into();
        if name.trim().is_empty() || name.trim() != name {
            return Err(ScoreError::InvalidMetricName(name));
        }
        if MetricId::CORE.iter().any(|m| m.as_str() == name) {
            return Err(ScoreError::InvalidMetricName(name));
        }
        Ok(MetricId::Ext(name))
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricId {
    type Err = ScoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "VQ" => Ok(MetricId::VQ),
            "TC" => Ok(MetricId::TC),
            "DD" => Ok(MetricId::DD),
            "TVA" => Ok(MetricId::TVA),
            "FC" => Ok(MetricId::FC),
            "AES" => Ok(MetricId::AES),
            "MPS" => Ok(MetricId::MPS),
            other => MetricId::extension(other),
        }
    }
}

impl Serialize for MetricId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for MetricId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Affine map from a scorer's raw output range onto the common target range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricScale {
    pub metric: MetricId,
    pub raw_min: f64,
    pub raw_max: f64,
    #[serde(default = "default_target_min")]
    pub target_min: f64,
    #[serde(default = "default_target_max")]
    pub target_max: f64,
}

fn default_target_min() -> f64 {
    0.0
}

fn default_target_max() -> f64 {
    5.0
}

impl MetricScale {
    pub fn new(metric: MetricId, raw_min: f64, raw_max: f64) -> Self {
        Self {
            metric,
            raw_min,
            raw_max,
            target_min: default_target_min(),
            target_max: default_target_max(),
        }
    }

    pub fn with_target(mut self, target_min: f64, target_max: f64) -> Self {
        self.target_min = target_min;
        self.target_max = target_max;
        self
    }

    /// Identity scale on `[0, 5]`, for scorers that already report normalized values.
    pub fn identity(metric: MetricId) -> Self {
        Self::new(metric, 0.0, 5.0)
    }

    /// Default raw ranges: VideoScore dimensions `[1, 4]`, AES `[0, 10]`,
    /// MPS `[0, 15]`, everything else `[0, 1]`.
    pub fn default_for(metric: MetricId) -> Self {
        let (lo, hi) = match metric {
            MetricId::VQ | MetricId::TC | MetricId::DD | MetricId::TVA | MetricId::FC => (1.0, 4.0),
            MetricId::AES => (0.0, 10.0),
            MetricId::MPS => (0.0, 15.0),
            MetricId::Ext(_) => (0.0, 1.0),
        };
        Self::new(metric, lo, hi)
    }

    pub fn validate(&self) -> Result<(), ScoreError> {
        let bad = |reason: &str| ScoreError::InvalidScale {
            metric: self.metric.clone(),
            reason: reason.to_string(),
        };
        let all = [self.raw_min, self.raw_max, self.target_min, self.target_max];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(bad("bounds must be finite"));
        }
        if !(self.raw_min < self.raw_max) {
            return Err(bad("raw_min must be below raw_max"));
        }
        if !(self.target_min < self.target_max) {
            return Err(bad("target_min must be below target_max"));
        }
        if !(self.raw_max - self.raw_min).is_finite() || !(self.target_max - self.target_min).is_finite() {
            return Err(bad("range width overflows"));
        }
        Ok(())
    }

    pub fn contains_target(&self, value: f64) -> bool {
        value >= self.target_min && value <= self.target_max
    }
}

static CLAMP_EVENTS: AtomicU64 = AtomicU64::new(0);

/// Number of raw values clamped by [`normalize`] since process start.
pub fn clamp_events() -> u64 {
    CLAMP_EVENTS.load(AtomicOrdering::Relaxed)
}

/// Normalizes and reports whether the raw value had to be clamped.
///
/// NaN maps to `target_min` and counts as a clamp.
pub fn normalize_checked(raw: f64, scale: &MetricScale) -> (f64, bool) {
    if raw.is_nan() || raw < scale.raw_min {
        return (scale.target_min, true);
    }
    if raw > scale.raw_max {
        return (scale.target_max, true);
    }
    // endpoints are exact, the interior follows the affine map
    if raw == scale.raw_min {
        return (scale.target_min, false);
    }
    if raw == scale.raw_max {
        return (scale.target_max, false);
    }
    let frac = (raw - scale.raw_min) / (scale.raw_max - scale.raw_min);
    let value = scale.target_min + frac * (scale.target_max - scale.target_min);
    (value.clamp(scale.target_min, scale.target_max), false)
}

/// Maps `raw` onto the scale's target interval, clamping out-of-range input.
pub fn normalize(raw: f64, scale: &MetricScale) -> f64 {
    let (value, clamped) = normalize_checked(raw, scale);
    if clamped {
        CLAMP_EVENTS.fetch_add(1, AtomicOrdering::Relaxed);
    }
    value
}

/// Per-metric scales for a configured metric set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScaleSet {
    scales: BTreeMap<MetricId, MetricScale>,
}

impl ScaleSet {
    pub fn new(scales: impl IntoIterator<Item = MetricScale>) -> Result<Self, ScoreError> {
        let mut map = BTreeMap::new();
        for scale in scales {
            scale.validate()?;
            map.insert(scale.metric.clone(), scale);
        }
        Ok(Self { scales: map })
    }

    /// The seven core metrics with their default raw ranges.
    pub fn default_core() -> Self {
        Self::new(MetricId::CORE.iter().cloned().map(MetricScale::default_for))
            .expect("default scales are valid")
    }

    /// The seven core metrics, each already on `[0, 5]`.
    pub fn identity_core() -> Self {
        Self::new(MetricId::CORE.iter().cloned().map(MetricScale::identity))
            .expect("identity scales are valid")
    }

    pub fn get(&self, metric: &MetricId) -> Option<&MetricScale> {
        self.scales.get(metric)
    }

    pub fn metrics(&self) -> impl Iterator<Item = &MetricId> {
        self.scales.keys()
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }

    pub fn insert(&mut self, scale: MetricScale) -> Result<(), ScoreError> {
        scale.validate()?;
        self.scales.insert(scale.metric.clone(), scale);
        Ok(())
    }
}

/// One scored evaluation: raw scorer outputs and their normalized forms.
///
/// Both maps are keyed by [`MetricId`], so iteration and serialization follow
/// canonical metric order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreVector {
    raw: BTreeMap<MetricId, f64>,
    norm: BTreeMap<MetricId, f64>,
}

#[derive(Deserialize)]
struct ScoreVectorRepr {
    raw: BTreeMap<MetricId, f64>,
    norm: BTreeMap<MetricId, f64>,
}

impl<'de> Deserialize<'de> for ScoreVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = ScoreVectorRepr::deserialize(deserializer)?;
        ScoreVector::from_parts(repr.raw, repr.norm).map_err(serde::de::Error::custom)
    }
}

impl ScoreVector {
    /// Normalizes raw values with the matching scales.
    pub fn from_raw(raw: BTreeMap<MetricId, f64>, scales: &ScaleSet) -> Result<Self, ScoreError> {
        let mut norm = BTreeMap::new();
        for (metric, value) in &raw {
            if !value.is_finite() {
                return Err(ScoreError::NonFinite(metric.clone()));
            }
            let scale = scales
                .get(metric)
                .ok_or_else(|| ScoreError::MissingScale(metric.clone()))?;
            norm.insert(metric.clone(), normalize(*value, scale));
        }
        Ok(Self { raw, norm })
    }

    pub fn from_parts(
        raw: BTreeMap<MetricId, f64>,
        norm: BTreeMap<MetricId, f64>,
    ) -> Result<Self, ScoreError> {
        if !raw.keys().eq(norm.keys()) {
            return Err(ScoreError::KeyMismatch);
        }
        Ok(Self { raw, norm })
    }

    /// Builds a vector whose raw values are already normalized (identity scale).
    pub fn from_normalized(values: impl IntoIterator<Item = (MetricId, f64)>) -> Self {
        let norm: BTreeMap<_, _> = values.into_iter().collect();
        Self { raw: norm.clone(), norm }
    }

    /// Core-metric vector from seven normalized values in canonical order.
    pub fn core(values: [f64; 7]) -> Self {
        Self::from_normalized(MetricId::CORE.iter().cloned().zip(values))
    }

    pub fn raw(&self) -> &BTreeMap<MetricId, f64> {
        &self.raw
    }

    pub fn normalized(&self) -> &BTreeMap<MetricId, f64> {
        &self.norm
    }

    pub fn norm_value(&self, metric: &MetricId) -> Option<f64> {
        self.norm.get(metric).copied()
    }

    pub fn metric_set(&self) -> Vec<MetricId> {
        self.norm.keys().cloned().collect()
    }

    pub fn same_metric_set(&self, other: &ScoreVector) -> bool {
        self.norm.keys().eq(other.norm.keys())
    }

    pub fn is_empty(&self) -> bool {
        self.norm.is_empty()
    }
}

/// Sum of normalized values over the vector's metric set.
pub fn overall(sv: &ScoreVector) -> Result<f64, ScoreError> {
    if sv.norm.is_empty() {
        return Err(ScoreError::EmptyMetricSet);
    }
    Ok(sv.norm.values().sum())
}

/// How survivors are ordered during selection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    /// Descending overall score.
    #[default]
    Sum,
    /// Non-dominated front first, overall score within a front.
    Pareto,
}

fn check_homogeneous<Id>(candidates: &[(Id, &ScoreVector)]) -> Result<(), ScoreError> {
    if let Some((_, first)) = candidates.first() {
        if candidates.iter().any(|(_, sv)| !sv.same_metric_set(first)) {
            return Err(ScoreError::HeterogeneousMetricSets);
        }
    }
    Ok(())
}

/// Comparator used after the primary key: higher TVA, then lower id.
fn tie_break<Id: Ord>(a: (&Id, &ScoreVector), b: (&Id, &ScoreVector)) -> Ordering {
    let tva_a = a.1.norm_value(&MetricId::TVA).unwrap_or(0.0);
    let tva_b = b.1.norm_value(&MetricId::TVA).unwrap_or(0.0);
    tva_b.total_cmp(&tva_a).then_with(|| a.0.cmp(b.0))
}

/// Orders candidates by descending overall score; ties go to the higher TVA
/// value and then the lower id.
pub fn rank<Id: Ord + Clone>(candidates: &[(Id, &ScoreVector)]) -> Result<Vec<Id>, ScoreError> {
    rank_with(candidates, SelectionRule::Sum)
}

pub fn rank_with<Id: Ord + Clone>(
    candidates: &[(Id, &ScoreVector)],
    rule: SelectionRule,
) -> Result<Vec<Id>, ScoreError> {
    check_homogeneous(candidates)?;
    let mut keyed = Vec::with_capacity(candidates.len());
    for (id, sv) in candidates {
        keyed.push((overall(sv)?, id, *sv));
    }
    let fronts = match rule {
        SelectionRule::Sum => vec![0usize; keyed.len()],
        SelectionRule::Pareto => pareto_fronts(&keyed.iter().map(|k| k.2).collect::<Vec<_>>()),
    };
    let mut order: Vec<usize> = (0..keyed.len()).collect();
    order.sort_by(|&i, &j| {
        fronts[i]
            .cmp(&fronts[j])
            .then_with(|| keyed[j].0.total_cmp(&keyed[i].0))
            .then_with(|| tie_break((keyed[i].1, keyed[i].2), (keyed[j].1, keyed[j].2)))
    });
    Ok(order.into_iter().map(|i| keyed[i].1.clone()).collect())
}

fn dominates(a: &ScoreVector, b: &ScoreVector) -> bool {
    let mut strictly = false;
    for (x, y) in a.norm.values().zip(b.norm.values()) {
        if x < y {
            return false;
        }
        if x > y {
            strictly = true;
        }
    }
    strictly
}

/// Front index per vector (0 = non-dominated).
fn pareto_fronts(vectors: &[&ScoreVector]) -> Vec<usize> {
    let n = vectors.len();
    let mut front = vec![usize::MAX; n];
    let mut assigned = 0;
    let mut level = 0;
    while assigned < n {
        let current: Vec<usize> = (0..n)
            .filter(|&i| front[i] == usize::MAX)
            .filter(|&i| {
                !(0..n).any(|j| j != i && front[j] == usize::MAX && dominates(vectors[j], vectors[i]))
            })
            .collect();
        for &i in &current {
            front[i] = level;
        }
        assigned += current.len();
        level += 1;
    }
    front
}

/// The first `n` ids of [`rank`]; all of them when fewer than `n` exist.
pub fn select_top_n<Id: Ord + Clone>(
    population: &[(Id, &ScoreVector)],
    n: usize,
) -> Result<Vec<Id>, ScoreError> {
    select_top_n_with(population, n, SelectionRule::Sum)
}

pub fn select_top_n_with<Id: Ord + Clone>(
    population: &[(Id, &ScoreVector)],
    n: usize,
    rule: SelectionRule,
) -> Result<Vec<Id>, ScoreError> {
    let mut ranked = rank_with(population, rule)?;
    ranked.truncate(n);
    Ok(ranked)
}

/// What `finalize` does when no candidate clears every threshold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// Return the best candidate anyway, flagged as not meeting thresholds.
    #[default]
    HighestOverall,
    /// Return the original prompt, flagged as not meeting thresholds.
    Reject,
}

/// Per-metric minimums on the normalized scale. Uncovered metrics are unconstrained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    #[serde(default)]
    pub per_metric_min: BTreeMap<MetricId, f64>,
    #[serde(default)]
    pub fallback: Fallback,
}

impl Default for ThresholdPolicy {
    /// 2.5 on every core metric, falling back to the highest overall.
    fn default() -> Self {
        Self::uniform(MetricId::CORE.iter().cloned(), 2.5)
    }
}

impl ThresholdPolicy {
    pub fn uniform(metrics: impl IntoIterator<Item = MetricId>, min: f64) -> Self {
        Self {
            per_metric_min: metrics.into_iter().map(|m| (m, min)).collect(),
            fallback: Fallback::HighestOverall,
        }
    }

    pub fn none() -> Self {
        Self {
            per_metric_min: BTreeMap::new(),
            fallback: Fallback::HighestOverall,
        }
    }

    pub fn with_fallback(mut self, fallback: Fallback) -> Self {
        self.fallback = fallback;
        self
    }

    pub fn validate(&self, scales: &ScaleSet) -> Result<(), ScoreError> {
        for (metric, &value) in &self.per_metric_min {
            let scale = scales
                .get(metric)
                .ok_or_else(|| ScoreError::MissingScale(metric.clone()))?;
            if !scale.contains_target(value) {
                return Err(ScoreError::ThresholdOutOfRange {
                    metric: metric.clone(),
                    value,
                });
            }
        }
        Ok(())
    }

    pub fn covered(&self) -> BTreeSet<&MetricId> {
        self.per_metric_min.keys().collect()
    }
}

/// True iff every covered metric meets its minimum (non-strict).
///
/// A covered metric that is absent from the vector fails the check.
pub fn passes_thresholds(sv: &ScoreVector, policy: &ThresholdPolicy) -> bool {
    policy
        .per_metric_min
        .iter()
        .all(|(metric, &min)| sv.norm_value(metric).is_some_and(|v| v >= min))
}
