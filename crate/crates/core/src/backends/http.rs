//! JSON-over-HTTP clients for remote deployments.
//!
//! Chat requests use the common chat-completions shape; only `model`,
//! `messages`, `temperature` and `max_tokens` are sent, and only
//! `choices[0].message.content`, `choices[0].finish_reason` and `usage` are
//! read back. Credentials come from environment variables only.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{
    BackendError, ChatClient, ChatMessage, ChatRequest, ChatResponse, GenerationRequest,
    GenerationResult, GenerationStatus, Generator, Scorer, ScorerDescriptor, Usage,
};
use crate::scores::MetricId;

pub const CHAT_API_KEY_ENV: &str = "PAV_CHAT_API_KEY";
pub const GEN_API_KEY_ENV: &str = "PAV_GEN_API_KEY";
pub const SCORER_API_KEY_ENV: &str = "PAV_SCORER_API_KEY";

fn key_from_env(var: &str) -> Option<String> {
    std::env::var(var).ok().filter(|k| !k.trim().is_empty())
}

#[derive(Debug, Serialize)]
struct WireChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Debug, Deserialize)]
struct WireChatResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Debug, Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Request body sent to the chat endpoint.
pub fn encode_chat_request(req: &ChatRequest) -> String {
    serde_json::to_string(&WireChatRequest {
        model: &req.model,
        messages: &req.messages,
        temperature: req.temperature,
        max_tokens: req.max_tokens,
    })
    .expect("chat request serializes")
}

pub fn decode_chat_response(body: &str) -> Result<ChatResponse, BackendError> {
    let wire: WireChatResponse =
        serde_json::from_str(body).map_err(|e| BackendError::Malformed(format!("chat response: {e}")))?;
    let choice = wire
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| BackendError::Malformed("chat response has no choices".into()))?;
    Ok(ChatResponse {
        content: choice.message.content.unwrap_or_default(),
        finish_reason: choice.finish_reason,
        usage: wire.usage.unwrap_or_default(),
    })
}

#[derive(Debug, Serialize)]
struct WireScoreRequest<'a> {
    artifact_ref: &'a str,
    prompt: &'a str,
}

#[derive(Debug, Deserialize)]
struct WireScoreResponse {
    scores: BTreeMap<String, f64>,
}

pub fn encode_score_request(artifact_ref: &str, prompt: &str) -> String {
    serde_json::to_string(&WireScoreRequest { artifact_ref, prompt }).expect("score request serializes")
}

/// Parses `{"scores": {...}}`, keeping only the declared metrics and
/// failing if any of them is missing.
pub fn decode_score_response(
    body: &str,
    descriptor: &ScorerDescriptor,
) -> Result<BTreeMap<MetricId, f64>, BackendError> {
    let malformed = |reason: String| BackendError::MalformedScore {
        scorer: descriptor.name.clone(),
        reason,
    };
    let wire: WireScoreResponse = serde_json::from_str(body).map_err(|e| malformed(e.to_string()))?;
    descriptor
        .metrics
        .iter()
        .map(|m| {
            wire.scores
                .get(m.as_str())
                .map(|v| (m.clone(), *v))
                .ok_or_else(|| malformed(format!("missing metric {m}")))
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct WireGenerationRequest<'a> {
    prompt: &'a str,
    negative_prompt: Option<&'a str>,
    profile: &'a str,
}

#[derive(Debug, Deserialize)]
struct WireGenerationResponse {
    artifact_ref: String,
}

pub fn encode_generation_request(req: &GenerationRequest) -> String {
    serde_json::to_string(&WireGenerationRequest {
        prompt: &req.prompt,
        negative_prompt: req.negative_prompt.as_deref(),
        profile: &req.profile,
    })
    .expect("generation request serializes")
}

/// Thin blocking JSON POST helper shared by the three clients.
#[derive(Debug, Clone)]
struct JsonEndpoint {
    url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl JsonEndpoint {
    fn new(url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { url: url.into(), api_key, agent }
    }

    fn post(&self, body: String) -> Result<String, BackendError> {
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send(body.as_bytes())
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let code = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !(200..300).contains(&code) {
            return Err(BackendError::Status { code, body: text });
        }
        Ok(text)
    }
}

const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone)]
pub struct HttpChatClient {
    endpoint: JsonEndpoint,
}

impl HttpChatClient {
    pub fn new(url: impl Into<String>, api_key: Option<String>) -> Self {
        Self { endpoint: JsonEndpoint::new(url, api_key, DEFAULT_TIMEOUT) }
    }

    /// Reads the bearer key from `PAV_CHAT_API_KEY`, if set.
    pub fn from_env(url: impl Into<String>) -> Self {
        Self::new(url, key_from_env(CHAT_API_KEY_ENV))
    }
}

impl ChatClient for HttpChatClient {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        req.validate()?;
        decode_chat_response(&self.endpoint.post(encode_chat_request(req))?)
    }

    fn fingerprint(&self) -> String {
        format!("http-chat:{}", self.endpoint.url)
    }
}

#[derive(Debug, Clone)]
pub struct HttpGenerator {
    endpoint: JsonEndpoint,
}

impl HttpGenerator {
    pub fn new(url: impl Into<String>, api_key: Option<String>) -> Self {
        Self { endpoint: JsonEndpoint::new(url, api_key, DEFAULT_TIMEOUT * 5) }
    }

    /// Reads the bearer key from `PAV_GEN_API_KEY`, if set.
    pub fn from_env(url: impl Into<String>) -> Self {
        Self::new(url, key_from_env(GEN_API_KEY_ENV))
    }
}

impl Generator for HttpGenerator {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        req.validate()?;
        let started = Instant::now();
        let body = self.endpoint.post(encode_generation_request(req))?;
        let wire: WireGenerationResponse = serde_json::from_str(&body)
            .map_err(|e| BackendError::Malformed(format!("generation response: {e}")))?;
        if wire.artifact_ref.is_empty() {
            return Err(BackendError::Malformed("empty artifact_ref".into()));
        }
        Ok(GenerationResult {
            artifact_ref: wire.artifact_ref,
            latency_ms: started.elapsed().as_millis() as u64,
            status: GenerationStatus::Succeeded,
        })
    }

    fn fingerprint(&self) -> String {
        format!("http-gen:{}", self.endpoint.url)
    }
}

#[derive(Debug, Clone)]
pub struct HttpScorer {
    descriptor: ScorerDescriptor,
    endpoint: JsonEndpoint,
}

impl HttpScorer {
    pub fn new(descriptor: ScorerDescriptor, api_key: Option<String>) -> Self {
        let endpoint = JsonEndpoint::new(descriptor.endpoint.clone(), api_key, DEFAULT_TIMEOUT);
        Self { descriptor, endpoint }
    }

    /// Reads the bearer key from `PAV_SCORER_API_KEY`, if set.
    pub fn from_env(descriptor: ScorerDescriptor) -> Self {
        Self::new(descriptor, key_from_env(SCORER_API_KEY_ENV))
    }
}

impl Scorer for HttpScorer {
    fn descriptor(&self) -> &ScorerDescriptor {
        &self.descriptor
    }

    fn score(&self, artifact_ref: &str, prompt: &str) -> Result<BTreeMap<MetricId, f64>, BackendError> {
        let body = self.endpoint.post(encode_score_request(artifact_ref, prompt))?;
        decode_score_response(&body, &self.descriptor)
    }

    fn fingerprint(&self) -> String {
        format!("http-scorer:{}:{}", self.descriptor.name, self.endpoint.url)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chat_request_wire_shape() {
        let req = ChatRequest::new(
            "gpt-4o",
            vec![ChatMessage::system("s"), ChatMessage::user("u")],
        )
        .with_temperature(0.5)
        .with_max_tokens(64)
        .with_sample(3);
        assert_eq!(
            encode_chat_request(&req),
            r#"{"model":"gpt-4o","messages":[{"role":"system","content":"s"},{"role":"user","content":"u"}],"temperature":0.5,"max_tokens":64}"#
        );
    }

    #[test]
    fn chat_response_reads_only_needed_fields() {
        let body = r#"{"id":"x","object":"chat.completion","choices":[{"index":0,"message":{"role":"assistant","content":"hi"},"finish_reason":"stop"}],"usage":{"prompt_tokens":3,"completion_tokens":1,"total_tokens":4}}"#;
        let resp = decode_chat_response(body).unwrap();
        assert_eq!(resp.content, "hi");
        assert_eq!(resp.finish_reason.as_deref(), Some("stop"));
        assert_eq!(resp.usage.total_tokens, 4);
        assert!(matches!(decode_chat_response(r#"{"choices":[]}"#), Err(BackendError::Malformed(_))));
    }

    #[test]
    fn score_response_requires_declared_metrics() {
        let desc = ScorerDescriptor::with_default_scales("aes", vec![MetricId::AES]);
        assert_eq!(
            decode_score_response(r#"{"scores":{"AES":6.5,"other":1}}"#, &desc).unwrap(),
            [(MetricId::AES, 6.5)].into_iter().collect()
        );
        assert!(matches!(
            decode_score_response(r#"{"scores":{"MPS":1}}"#, &desc),
            Err(BackendError::MalformedScore { .. })
        ));
        assert_eq!(
            encode_score_request("mock://a", "p"),
            r#"{"artifact_ref":"mock://a","prompt":"p"}"#
        );
    }
}
