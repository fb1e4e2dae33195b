//! Deterministic offline backends.
//!
//! Every mock derives its output from a seed and the canonical bytes of the
//! request, so answers are stable across processes and caching them is
//! transparent.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    BackendError, ChatClient, ChatRequest, ChatResponse, GenerationRequest, GenerationResult,
    GenerationStatus, Generator, DESCRIPTOR_POOL,
};
use crate::digest::{hex_digest, seed_from};
use crate::templates::REFINE_V1;

/// Replays canned responses in order, cycling when exhausted.
#[derive(Debug)]
pub struct ScriptedChat {
    responses: Vec<String>,
    cursor: AtomicUsize,
}

impl ScriptedChat {
    pub fn new(responses: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            responses: responses.into_iter().map(Into::into).collect(),
            cursor: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.cursor.load(Ordering::SeqCst)
    }
}

impl ChatClient for ScriptedChat {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        req.validate()?;
        if self.responses.is_empty() {
            return Err(BackendError::Malformed("scripted chat has no responses".into()));
        }
        let i = self.cursor.fetch_add(1, Ordering::SeqCst) % self.responses.len();
        Ok(ChatResponse::text(self.responses[i].clone()))
    }

    fn fingerprint(&self) -> String {
        format!("scripted:{}", hex_digest(self.responses.iter()))
    }
}

fn request_rng(seed: u64, req: &ChatRequest) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed_from([&seed.to_le_bytes()[..], &req.canonical_bytes()]))
}

fn word(rng: &mut ChaCha8Rng) -> &'static str {
    DESCRIPTOR_POOL[rng.random_range(0..DESCRIPTOR_POOL.len())]
}

fn descriptive_sentence(rng: &mut ChaCha8Rng) -> String {
    let (a, b) = (word(rng), word(rng));
    match rng.random_range(0..4) {
        0 => format!("The scene is {a} and {b}."),
        1 => format!("The camera stays {a}, with {b} detail."),
        2 => format!("The atmosphere feels {a} and {b}."),
        _ => format!("The lighting is {a}, giving a {b} look."),
    }
}

/// Parses an operator-prompt line `index. text (s1, s2, ...)`.
fn parse_scored_line(line: &str) -> Option<(&str, f64)> {
    let (index, rest) = line.split_once(". ")?;
    index.parse::<usize>().ok()?;
    let open = rest.rfind(" (")?;
    let scores = rest[open + 2..].strip_suffix(')')?;
    let sum = scores
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .sum::<Result<f64, _>>()
        .ok()?;
    Some((&rest[..open], sum))
}

/// Stand-in for the LLM evolution operator.
///
/// Reads the indexed, scored prompts from the last user turn, takes the best
/// one as parent, and answers with `offspring` variants that append one or
/// two descriptive sentences, each wrapped in `<PROMPT>` tags.
#[derive(Debug, Clone)]
pub struct MockOperator {
    seed: u64,
    offspring: usize,
}

impl MockOperator {
    pub fn new(seed: u64, offspring: usize) -> Self {
        Self { seed, offspring }
    }
}

impl ChatClient for MockOperator {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        req.validate()?;
        let user = req
            .last_user_content()
            .ok_or_else(|| BackendError::InvalidRequest("no user turn".into()))?;
        let mut parent: Option<(&str, f64)> = None;
        for candidate in user.lines().filter_map(parse_scored_line) {
            if parent.is_none_or(|(_, best)| candidate.1 > best) {
                parent = Some(candidate);
            }
        }
        let (parent, _) = parent
            .ok_or_else(|| BackendError::InvalidRequest("no scored prompts in request".into()))?;
        let mut rng = request_rng(self.seed, req);
        let mut out = String::from("Here are the refined prompts:\n");
        for _ in 0..self.offspring {
            let mut text = parent.to_string();
            for _ in 0..rng.random_range(1..=2) {
                text.push(' ');
                text.push_str(&descriptive_sentence(&mut rng));
            }
            out.push_str(&format!("<PROMPT>{text}</PROMPT>\n"));
        }
        Ok(ChatResponse::text(out))
    }

    fn fingerprint(&self) -> String {
        format!("mock-operator:{}:{}", self.seed, self.offspring)
    }
}

/// Stand-in for a fine-tuned refinement model: returns the source prompt
/// (recovered from the refinement dialog template) extended by one to three
/// descriptive sentences.
#[derive(Debug, Clone)]
pub struct MockRefiner {
    seed: u64,
}

impl MockRefiner {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

impl ChatClient for MockRefiner {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        req.validate()?;
        let user = req
            .last_user_content()
            .ok_or_else(|| BackendError::InvalidRequest("no user turn".into()))?;
        let source = REFINE_V1.parse(user).unwrap_or(user).trim();
        let mut rng = request_rng(self.seed, req);
        let mut text = source.to_string();
        for _ in 0..rng.random_range(1..=3) {
            text.push(' ');
            text.push_str(&descriptive_sentence(&mut rng));
        }
        Ok(ChatResponse::text(text))
    }

    fn fingerprint(&self) -> String {
        format!("mock-refiner:{}", self.seed)
    }
}

/// Defects the mock negative-prompt writer draws from.
pub const DEFECT_POOL: &[&str] = &[
    "low quality", "low resolution", "blurry", "harsh lighting", "dull colors", "overexposed",
    "underexposed", "jerky motion", "shaky camera", "rotating camera", "flickering", "deformed body",
    "bad hands", "missing fingers", "extra limbs", "distorted face", "bad anatomy", "watermark",
    "text", "static frame", "noisy", "cluttered background", "washed out", "ugly composition",
];

/// Stand-in for a negative-prompt model: answers with a seeded,
/// comma-separated list of defect descriptors.
#[derive(Debug, Clone)]
pub struct MockNegativeWriter {
    seed: u64,
}

impl MockNegativeWriter {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

impl ChatClient for MockNegativeWriter {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        req.validate()?;
        let mut rng = request_rng(self.seed, req);
        let mut picked: Vec<&str> = Vec::new();
        let n = rng.random_range(5..=9);
        while picked.len() < n {
            let d = DEFECT_POOL[rng.random_range(0..DEFECT_POOL.len())];
            if !picked.contains(&d) {
                picked.push(d);
            }
        }
        Ok(ChatResponse::text(picked.join(", ")))
    }

    fn fingerprint(&self) -> String {
        format!("mock-negative:{}", self.seed)
    }
}

/// Generation stand-in: the artifact reference is a digest of the request.
#[derive(Debug, Clone, Default)]
pub struct MockGenerator;

impl MockGenerator {
    pub fn new() -> Self {
        Self
    }
}

impl Generator for MockGenerator {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        req.validate()?;
        let (has_negative, negative) = match &req.negative_prompt {
            Some(n) => ("1", n.as_str()),
            None => ("0", ""),
        };
        let digest = hex_digest([req.prompt.as_str(), has_negative, negative, req.profile.as_str()]);
        Ok(GenerationResult {
            artifact_ref: format!("mock://{digest}"),
            latency_ms: 0,
            status: GenerationStatus::Succeeded,
        })
    }

    fn fingerprint(&self) -> String {
        "mock-generator:v1".into()
    }
}
