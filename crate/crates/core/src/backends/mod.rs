//! Client interfaces for the three external dependencies (chat-completion
//! LLM, generation service, reward scorers), the layers that add retry,
//! concurrency limits, call accounting and caching on top of them, and
//! deterministic offline implementations.

mod cache;
mod evaluator;
pub mod http;
pub mod mock;
mod retry;
mod scoring;
mod types;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};

pub use cache::Cache;
pub use evaluator::{Evaluation, Evaluator, GenerationSettings};
pub use retry::{RetryPolicy, StatusPattern};
pub use scoring::{
    synthetic_scores, PreferredVocabulary, ScorerDescriptor, ScorerSet, SyntheticScorer,
    DESCRIPTOR_POOL,
};
pub use types::{
    ChatMessage, ChatRequest, ChatResponse, GenerationRequest, GenerationResult, GenerationStatus,
    Role, Usage,
};

use crate::scores::{MetricId, ScoreError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP status {code}: {body}")]
    Status { code: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("scorer {scorer} returned a malformed score: {reason}")]
    MalformedScore { scorer: String, reason: String },
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: Box<BackendError> },
    #[error("backend configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Score(#[from] ScoreError),
}

impl BackendError {
    /// True for failures caused by the remote side rather than by the caller.
    pub fn is_remote_failure(&self) -> bool {
        matches!(
            self,
            BackendError::Transport(_)
                | BackendError::Status { .. }
                | BackendError::Exhausted { .. }
                | BackendError::Malformed(_)
                | BackendError::MalformedScore { .. }
        )
    }
}

pub trait ChatClient: Send + Sync {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError>;

    /// Identifies the endpoint for cache keys. Model and temperature are
    /// part of the request and so already part of the key.
    fn fingerprint(&self) -> String;
}

pub trait Generator: Send + Sync {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, BackendError>;

    fn fingerprint(&self) -> String;
}

pub trait Scorer: Send + Sync {
    fn descriptor(&self) -> &ScorerDescriptor;

    /// Raw values for exactly the metrics in the descriptor.
    fn score(&self, artifact_ref: &str, prompt: &str) -> Result<BTreeMap<MetricId, f64>, BackendError>;

    fn fingerprint(&self) -> String;
}

impl<T: ChatClient + ?Sized> ChatClient for Arc<T> {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).chat(req)
    }
    fn fingerprint(&self) -> String {
        (**self).fingerprint()
    }
}

impl<T: Generator + ?Sized> Generator for Arc<T> {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        (**self).generate(req)
    }
    fn fingerprint(&self) -> String {
        (**self).fingerprint()
    }
}

impl<T: Scorer + ?Sized> Scorer for Arc<T> {
    fn descriptor(&self) -> &ScorerDescriptor {
        (**self).descriptor()
    }
    fn score(&self, artifact_ref: &str, prompt: &str) -> Result<BTreeMap<MetricId, f64>, BackendError> {
        (**self).score(artifact_ref, prompt)
    }
    fn fingerprint(&self) -> String {
        (**self).fingerprint()
    }
}

/// Number of calls that actually reached each kind of backend.
#[derive(Debug, Default)]
pub struct CallStats {
    chat: AtomicU64,
    generate: AtomicU64,
    score: AtomicU64,
    attempts: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct CallCounts {
    pub chat: u64,
    pub generate: u64,
    pub score: u64,
    pub attempts: u64,
}

impl CallCounts {
    pub fn total(&self) -> u64 {
        self.chat + self.generate + self.score
    }
}

impl CallStats {
    pub fn snapshot(&self) -> CallCounts {
        CallCounts {
            chat: self.chat.load(Ordering::Relaxed),
            generate: self.generate.load(Ordering::Relaxed),
            score: self.score.load(Ordering::Relaxed),
            attempts: self.attempts.load(Ordering::Relaxed),
        }
    }
}

/// Retries the inner client per a [`RetryPolicy`].
pub struct Retrying<C> {
    inner: C,
    policy: RetryPolicy,
    stats: Option<Arc<CallStats>>,
}

impl<C> Retrying<C> {
    pub fn new(inner: C, policy: RetryPolicy) -> Self {
        Self { inner, policy, stats: None }
    }

    /// Records every attempt (not just every call) in `stats`.
    pub fn with_stats(mut self, stats: Arc<CallStats>) -> Self {
        self.stats = Some(stats);
        self
    }

    fn record(&self, attempts: u32) {
        if let Some(stats) = &self.stats {
            stats.attempts.fetch_add(attempts as u64, Ordering::Relaxed);
        }
    }

    fn run<T>(&self, op: impl FnMut(u32) -> Result<T, BackendError>) -> Result<T, BackendError> {
        match self.policy.run(op) {
            Ok((value, attempts)) => {
                self.record(attempts);
                Ok(value)
            }
            Err(err) => {
                let attempts = match &err {
                    BackendError::Exhausted { attempts, .. } => *attempts,
                    _ => 1,
                };
                self.record(attempts);
                Err(err)
            }
        }
    }
}

impl<C: ChatClient> ChatClient for Retrying<C> {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        req.validate()?;
        self.run(|_| self.inner.chat(req))
    }
    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }
}

impl<C: Generator> Generator for Retrying<C> {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        req.validate()?;
        self.run(|_| self.inner.generate(req))
    }
    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }
}

impl<C: Scorer> Scorer for Retrying<C> {
    fn descriptor(&self) -> &ScorerDescriptor {
        self.inner.descriptor()
    }
    fn score(&self, artifact_ref: &str, prompt: &str) -> Result<BTreeMap<MetricId, f64>, BackendError> {
        self.run(|_| self.inner.score(artifact_ref, prompt))
    }
    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Semaphore {
    permits: Mutex<usize>,
    cond: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            cond: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut permits = self.permits.lock().expect("semaphore poisoned");
        while *permits == 0 {
            permits = self.cond.wait(permits).expect("semaphore poisoned");
        }
        *permits -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().expect("semaphore poisoned") += 1;
        self.0.cond.notify_one();
    }
}

/// Bounds the number of concurrent calls into the inner client.
pub struct Limited<C> {
    inner: C,
    sem: Semaphore,
}

impl<C> Limited<C> {
    pub fn new(inner: C, max_in_flight: usize) -> Self {
        Self { inner, sem: Semaphore::new(max_in_flight) }
    }
}

impl<C: ChatClient> ChatClient for Limited<C> {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let _permit = self.sem.acquire();
        self.inner.chat(req)
    }
    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }
}

impl<C: Generator> Generator for Limited<C> {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        let _permit = self.sem.acquire();
        self.inner.generate(req)
    }
    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }
}

impl<C: Scorer> Scorer for Limited<C> {
    fn descriptor(&self) -> &ScorerDescriptor {
        self.inner.descriptor()
    }
    fn score(&self, artifact_ref: &str, prompt: &str) -> Result<BTreeMap<MetricId, f64>, BackendError> {
        let _permit = self.sem.acquire();
        self.inner.score(artifact_ref, prompt)
    }
    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }
}

/// Counts calls reaching the inner client.
pub struct Counted<C> {
    inner: C,
    stats: Arc<CallStats>,
}

impl<C> Counted<C> {
    pub fn new(inner: C, stats: Arc<CallStats>) -> Self {
        Self { inner, stats }
    }
}

impl<C: ChatClient> ChatClient for Counted<C> {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.stats.chat.fetch_add(1, Ordering::Relaxed);
        self.inner.chat(req)
    }
    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }
}

impl<C: Generator> Generator for Counted<C> {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        self.stats.generate.fetch_add(1, Ordering::Relaxed);
        self.inner.generate(req)
    }
    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }
}

impl<C: Scorer> Scorer for Counted<C> {
    fn descriptor(&self) -> &ScorerDescriptor {
        self.inner.descriptor()
    }
    fn score(&self, artifact_ref: &str, prompt: &str) -> Result<BTreeMap<MetricId, f64>, BackendError> {
        self.stats.score.fetch_add(1, Ordering::Relaxed);
        self.inner.score(artifact_ref, prompt)
    }
    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }
}

/// Answers repeated requests from the cache, keyed by the endpoint
/// fingerprint and the request's canonical serialization.
pub struct CachedChat<C> {
    inner: C,
    cache: Arc<Cache>,
}

impl<C: ChatClient> CachedChat<C> {
    pub fn new(inner: C, cache: Arc<Cache>) -> Self {
        Self { inner, cache }
    }

    pub fn key(&self, req: &ChatRequest) -> String {
        Cache::key("chat", [self.inner.fingerprint().into_bytes(), req.canonical_bytes()])
    }
}

impl<C: ChatClient> ChatClient for CachedChat<C> {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let key = self.key(req);
        if let Some(hit) = self.cache.get::<ChatResponse>(&key) {
            return Ok(hit);
        }
        let resp = self.inner.chat(req)?;
        if let Err(err) = self.cache.put(&key, &resp) {
            tracing::warn!(%err, "failed to write chat cache entry");
        }
        Ok(resp)
    }
    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::ScriptedChat;

    struct Flaky {
        fail_first: u32,
        calls: AtomicU64,
    }

    impl ChatClient for Flaky {
        fn chat(&self, _req: &ChatRequest) -> Result<ChatResponse, BackendError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst) as u32;
            if n < self.fail_first {
                Err(BackendError::Status { code: 503, body: "busy".into() })
            } else {
                Ok(ChatResponse::text("ok"))
            }
        }
        fn fingerprint(&self) -> String {
            "flaky".into()
        }
    }

    fn req() -> ChatRequest {
        ChatRequest::new("m", vec![ChatMessage::user("hi")])
    }

    fn fast(max_attempts: u32) -> RetryPolicy {
        RetryPolicy { max_attempts, initial_delay_ms: 1, max_delay_ms: 1, ..RetryPolicy::default() }
    }

    #[test]
    fn retry_then_success_records_attempts() {
        let stats = Arc::new(CallStats::default());
        let client = Retrying::new(Flaky { fail_first: 3, calls: AtomicU64::new(0) }, fast(4))
            .with_stats(stats.clone());
        assert_eq!(client.chat(&req()).unwrap().content, "ok");
        assert_eq!(stats.snapshot().attempts, 4);
    }

    #[test]
    fn retries_exhausted_surface_cause() {
        let client = Retrying::new(Flaky { fail_first: 10, calls: AtomicU64::new(0) }, fast(3));
        let err = client.chat(&req()).unwrap_err();
        assert!(matches!(err, BackendError::Exhausted { attempts: 3, .. }));
    }

    #[test]
    fn cached_second_call_skips_backend() {
        let stats = Arc::new(CallStats::default());
        let client = CachedChat::new(
            Counted::new(ScriptedChat::new(["a", "b"]), stats.clone()),
            Arc::new(Cache::memory()),
        );
        assert_eq!(client.chat(&req()).unwrap().content, "a");
        assert_eq!(client.chat(&req()).unwrap().content, "a");
        assert_eq!(stats.snapshot().chat, 1);
        // a different sample index is a different request
        assert_eq!(client.chat(&req().with_sample(1)).unwrap().content, "b");
        assert_eq!(stats.snapshot().chat, 2);
    }

    #[test]
    fn empty_messages_rejected() {
        let client = Retrying::new(ScriptedChat::new(["a"]), fast(1));
        let bad = ChatRequest::new("m", vec![]);
        assert!(matches!(client.chat(&bad), Err(BackendError::InvalidRequest(_))));
    }

    #[test]
    fn limited_bounds_in_flight() {
        struct Slow {
            current: AtomicU64,
            peak: AtomicU64,
        }
        impl ChatClient for Slow {
            fn chat(&self, _req: &ChatRequest) -> Result<ChatResponse, BackendError> {
                let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(std::time::Duration::from_millis(5));
                self.current.fetch_sub(1, Ordering::SeqCst);
                Ok(ChatResponse::text("x"))
            }
            fn fingerprint(&self) -> String {
                "slow".into()
            }
        }
        let client = Limited::new(
            Slow { current: AtomicU64::new(0), peak: AtomicU64::new(0) },
            2,
        );
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| client.chat(&req()).unwrap());
            }
        });
        assert!(client.inner.peak.load(Ordering::SeqCst) <= 2);
    }
}
