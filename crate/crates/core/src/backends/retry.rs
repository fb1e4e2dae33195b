use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::BackendError;

/// An HTTP status or a whole status class (`"5xx"`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatusPattern {
    Exact(u16),
    Class(u16),
}

impl StatusPattern {
    pub fn matches(&self, code: u16) -> bool {
        match *self {
            StatusPattern::Exact(c) => c == code,
            StatusPattern::Class(c) => code / 100 == c,
        }
    }
}

impl FromStr for StatusPattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(class) = s.strip_suffix("xx") {
            return match class.parse::<u16>() {
                Ok(c @ 1..=5) => Ok(StatusPattern::Class(c)),
                _ => Err(format!("bad status class {s:?}")),
            };
        }
        match s.parse::<u16>() {
            Ok(c @ 100..=599) => Ok(StatusPattern::Exact(c)),
            _ => Err(format!("bad status code {s:?}")),
        }
    }
}

impl fmt::Display for StatusPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StatusPattern::Exact(c) => write!(f, "{c}"),
            StatusPattern::Class(c) => write!(f, "{c}xx"),
        }
    }
}

impl Serialize for StatusPattern {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StatusPattern {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// Exponential backoff over retryable failures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_delay_ms: u64,
    pub multiplier: f64,
    pub max_delay_ms: u64,
    pub retry_on: Vec<StatusPattern>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            initial_delay_ms: 500,
            multiplier: 2.0,
            max_delay_ms: 8_000,
            retry_on: vec![StatusPattern::Exact(408), StatusPattern::Exact(429), StatusPattern::Class(5)],
        }
    }
}

impl RetryPolicy {
    pub fn no_retry() -> Self {
        Self { max_attempts: 1, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_attempts < 1 {
            return Err(BackendError::Config("retry.max_attempts must be >= 1".into()));
        }
        if self.initial_delay_ms == 0 || self.max_delay_ms == 0 {
            return Err(BackendError::Config("retry delays must be positive".into()));
        }
        if !(self.multiplier.is_finite() && self.multiplier >= 1.0) {
            return Err(BackendError::Config("retry.multiplier must be >= 1".into()));
        }
        Ok(())
    }

    /// Delay before retry number `retry` (1-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = self.multiplier.powi(retry.saturating_sub(1) as i32);
        let ms = (self.initial_delay_ms as f64 * factor).min(self.max_delay_ms as f64);
        Duration::from_millis(ms as u64)
    }

    pub fn is_retryable(&self, err: &BackendError) -> bool {
        match err {
            BackendError::Transport(_) => true,
            BackendError::Status { code, .. } => self.retry_on.iter().any(|p| p.matches(*code)),
            _ => false,
        }
    }

    /// Runs `op` until it succeeds, fails terminally, or attempts run out.
    /// Returns the value and the number of attempts used.
    pub fn run<T>(
        &self,
        mut op: impl FnMut(u32) -> Result<T, BackendError>,
    ) -> Result<(T, u32), BackendError> {
        let mut attempt = 1;
        loop {
            match op(attempt) {
                Ok(value) => return Ok((value, attempt)),
                Err(err) if !self.is_retryable(&err) => return Err(err),
                Err(err) if attempt >= self.max_attempts => {
                    return Err(BackendError::Exhausted {
                        attempts: attempt,
                        last: Box::new(err),
                    })
                }
                Err(err) => {
                    tracing::debug!(attempt, error = %err, "retrying backend call");
                    std::thread::sleep(self.delay(attempt));
                    attempt += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fast(max_attempts: u32) -> RetryPolicy {
        RetryPolicy {
            max_attempts,
            initial_delay_ms: 1,
            max_delay_ms: 2,
            ..RetryPolicy::default()
        }
    }

    #[test]
    fn succeeds_on_last_attempt() {
        let policy = fast(4);
        let (value, attempts) = policy
            .run(|n| {
                if n < 4 {
                    Err(BackendError::Status { code: 503, body: String::new() })
                } else {
                    Ok(n)
                }
            })
            .unwrap();
        assert_eq!((value, attempts), (4, 4));
    }

    #[test]
    fn exhaustion_keeps_terminal_cause() {
        let err = fast(3)
            .run::<()>(|_| Err(BackendError::Transport("reset".into())))
            .unwrap_err();
        match err {
            BackendError::Exhausted { attempts, last } => {
                assert_eq!(attempts, 3);
                assert!(matches!(*last, BackendError::Transport(_)));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_retryable_fails_immediately() {
        let mut calls = 0;
        let err = fast(5)
            .run::<()>(|_| {
                calls += 1;
                Err(BackendError::Status { code: 401, body: "no".into() })
            })
            .unwrap_err();
        assert_eq!(calls, 1);
        assert!(matches!(err, BackendError::Status { code: 401, .. }));
    }

    #[test]
    fn backoff_is_capped() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay(1), Duration::from_millis(500));
        assert_eq!(p.delay(2), Duration::from_millis(1000));
        assert_eq!(p.delay(10), Duration::from_millis(8000));
    }

    #[test]
    fn status_patterns() {
        assert!("5xx".parse::<StatusPattern>().unwrap().matches(502));
        assert!(!"429".parse::<StatusPattern>().unwrap().matches(430));
        assert!("9xx".parse::<StatusPattern>().is_err());
        assert!(RetryPolicy { max_attempts: 0, ..RetryPolicy::default() }.validate().is_err());
    }
}
