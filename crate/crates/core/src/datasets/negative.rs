use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{sft_line, DatasetError};
use crate::backends::{ChatClient, ChatMessage, ChatRequest};
use crate::templates::{FIXED_NEGATIVE_PROMPT, NEGATIVE_ICL_SYSTEM, NEGATIVE_V1};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeStrategy {
    Fixed,
    Icl,
    TunedPair,
}

impl std::str::FromStr for NegativeStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed" => Ok(Self::Fixed),
            "icl" => Ok(Self::Icl),
            "tuned_pair" | "tuned-pair" => Ok(Self::TunedPair),
            other => Err(format!("unknown negative strategy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativePromptRecord {
    pub positive: String,
    pub negative: String,
    pub strategy: NegativeStrategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NegativeConfig {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for NegativeConfig {
    fn default() -> Self {
        Self { model: "negative-writer".into(), temperature: 0.7, max_tokens: 512 }
    }
}

const STOPWORDS: &[&str] = &[
    "the", "and", "with", "for", "from", "into", "onto", "its", "his", "her", "their", "this", "that",
    "these", "those", "are", "was", "were", "has", "have", "had", "being", "been", "while", "where",
    "who", "which", "there", "then", "than", "very", "some", "any", "all", "one", "two", "over",
    "under", "near", "off", "out", "not", "but", "video", "scene", "shot",
];

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.chars().count() >= 3)
        .map(str::to_lowercase)
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
}

fn sentences(text: &str) -> impl Iterator<Item = &str> {
    text.split(['.', '!', '?', ';', '\n']).map(str::trim).filter(|s| !s.is_empty())
}

/// Content words of the positive prompt's first sentence.
pub fn subject_words(positive: &str) -> BTreeSet<String> {
    sentences(positive).next().map(|s| words(s).collect()).unwrap_or_default()
}

/// A negative prompt must be a comma-separated descriptor list and must not
/// contain a sentence that restates the positive prompt's subject (one
/// sharing at least three and at least half of its content words).
pub fn validate_negative(positive: &str, negative: &str) -> Result<(), String> {
    let negative = negative.trim();
    if negative.is_empty() {
        return Err("negative prompt is empty".into());
    }
    if !negative.contains(',') {
        return Err("negative prompt is not comma-separated".into());
    }
    let subject = subject_words(positive);
    for sentence in sentences(negative) {
        let shared: BTreeSet<String> = words(sentence).filter(|w| subject.contains(w)).collect();
        if shared.len() >= 3 && shared.len() * 2 >= subject.len() {
            return Err(format!("sentence restates the subject: {sentence:?}"));
        }
    }
    Ok(())
}

fn request_messages(
    positive: &str,
    strategy: NegativeStrategy,
    few_shots: &[(String, String)],
) -> Result<Vec<ChatMessage>, DatasetError> {
    match strategy {
        NegativeStrategy::Fixed => unreachable!("fixed strategy never queries a model"),
        NegativeStrategy::Icl => {
            if few_shots.is_empty() {
                return Err(DatasetError::InvalidConfig("icl strategy needs few-shot exemplars".into()));
            }
            let mut messages = vec![ChatMessage::system(NEGATIVE_ICL_SYSTEM)];
            for (pos, neg) in few_shots {
                messages.push(ChatMessage::user(pos.as_str()));
                messages.push(ChatMessage::assistant(neg.as_str()));
            }
            messages.push(ChatMessage::user(positive));
            Ok(messages)
        }
        NegativeStrategy::TunedPair => Ok(vec![ChatMessage::user(NEGATIVE_V1.render(positive))]),
    }
}

/// Negative prompt for `positive`. Model answers failing
/// [`validate_negative`] are retried once with a fresh sample.
pub fn make_negative(
    positive: &str,
    strategy: NegativeStrategy,
    client: Option<&dyn ChatClient>,
    few_shots: &[(String, String)],
    cfg: &NegativeConfig,
) -> Result<NegativePromptRecord, DatasetError> {
    let positive = positive.trim();
    let record = |negative: String| NegativePromptRecord { positive: positive.to_string(), negative, strategy };
    if strategy == NegativeStrategy::Fixed {
        return Ok(record(FIXED_NEGATIVE_PROMPT.to_string()));
    }
    let client = client
        .ok_or_else(|| DatasetError::InvalidConfig(format!("{strategy:?} strategy needs a chat backend")))?;
    let messages = request_messages(positive, strategy, few_shots)?;
    let mut reason = String::new();
    for sample in 0..2 {
        let req = ChatRequest::new(cfg.model.clone(), messages.clone())
            .with_temperature(cfg.temperature)
            .with_max_tokens(cfg.max_tokens)
            .with_sample(sample);
        let negative = client.chat(&req)?.content.trim().to_string();
        match validate_negative(positive, &negative) {
            Ok(()) => return Ok(record(negative)),
            Err(r) => {
                tracing::warn!(sample, reason = %r, "negative prompt rejected");
                reason = r;
            }
        }
    }
    Err(DatasetError::NegativeRejected(reason))
}

/// Curated (positive, negative) pairs as SFT JSONL for tuning a
/// negative-prompt model.
pub fn negative_pairs_jsonl(pairs: &[(String, String)]) -> String {
    let mut out = String::new();
    for (pos, neg) in pairs {
        out.push_str(&sft_line(&NEGATIVE_V1, pos, neg));
        out.push('\n');
    }
    out
}
