//! Pluggable completion backends with disk caching, retry and recording,
//! plus the structured `Advisor` contract the tree builder talks to.
//!
//! Two layers: `Gateway` moves raw prompt text in and out of a backend
//! (HTTP, replay, or a test double); `Advisor` answers typed split and
//! probability queries. The text path implements `Advisor` on top of the
//! prompt templates and parsers; the oracle implements it directly.

mod http;
mod store;
mod text_advisor;

pub use http::{HttpBackend, API_KEY_ENV, BASE_URL_ENV};
pub use store::{PromptStore, ReplayBackend, StoredCompletion};
pub use text_advisor::TextAdvisor;

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AdvisorError, GatewayError};
use crate::schema::{BranchContext, Constraint, FeatureSpec, ProbabilityDistribution, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    Assistant,
    User,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptParams {
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for PromptParams {
    fn default() -> Self {
        PromptParams {
            model_name: "gpt-4o-mini".to_string(),
            temperature: 0.0,
            max_tokens: 256,
        }
    }
}

/// A three-message chat prompt in the fixed system/assistant/user pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatPrompt {
    pub messages: Vec<Message>,
    pub params: PromptParams,
}

impl ChatPrompt {
    pub fn new(system: String, assistant: String, user: String, params: PromptParams) -> Self {
        ChatPrompt {
            messages: vec![
                Message {
                    role: Role::System,
                    content: system,
                },
                Message {
                    role: Role::Assistant,
                    content: assistant,
                },
                Message {
                    role: Role::User,
                    content: user,
                },
            ],
            params,
        }
    }

    pub fn system(&self) -> &str {
        &self.messages[0].content
    }

    pub fn assistant(&self) -> &str {
        &self.messages[1].content
    }

    pub fn user(&self) -> &str {
        &self.messages[2].content
    }

    /// Content hash used for cache files and replay recordings.
    pub fn cache_key(&self) -> String {
        let doc = serde_json::to_string(self).expect("prompt serializes");
        let mut hasher = Sha256::new();
        hasher.update(doc.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone)]
pub struct CompletionResult {
    pub text: String,
    pub cached: bool,
    pub attempts: u32,
}

/// A raw text-completion source. Implementations must be callable from
/// multiple threads at once.
pub trait CompletionBackend: Send + Sync {
    fn complete_raw(&self, prompt: &ChatPrompt) -> Result<String, GatewayError>;
    /// Short name recorded in build metadata, e.g. "http" or "replay".
    fn name(&self) -> &'static str;
    /// Whether repeated identical runs yield identical text.
    fn is_deterministic(&self) -> bool;
}

#[derive(Debug, Clone, Copy)]
pub struct RetryConfig {
    pub attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryConfig {
    fn default() -> Self {
        RetryConfig {
            attempts: 3,
            base_delay: Duration::from_millis(250),
            max_delay: Duration::from_secs(10),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GatewayStats {
    /// Completions answered by the backend (cache hits excluded).
    pub completions: u64,
    pub cache_hits: u64,
}

/// Counting semaphore bounding in-flight backend calls.
struct Inflight {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Inflight {
    fn new(permits: usize) -> Self {
        Inflight {
            permits: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> InflightGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.cv.wait(permits).unwrap();
        }
        *permits -= 1;
        InflightGuard { sem: self }
    }
}

struct InflightGuard<'a> {
    sem: &'a Inflight,
}

impl Drop for InflightGuard<'_> {
    fn drop(&mut self) {
        let mut permits = self.sem.permits.lock().unwrap();
        *permits += 1;
        self.sem.cv.notify_one();
    }
}

/// Completion front door: cache lookup, bounded concurrency, retry with
/// exponential backoff, then optional recording of the result.
pub struct Gateway {
    backend: Box<dyn CompletionBackend>,
    cache: Option<PromptStore>,
    recorder: Option<PromptStore>,
    retry: RetryConfig,
    inflight: Inflight,
    stats: Mutex<GatewayStats>,
}

impl Gateway {
    pub fn new(backend: Box<dyn CompletionBackend>) -> Self {
        Gateway {
            backend,
            cache: None,
            recorder: None,
            retry: RetryConfig::default(),
            inflight: Inflight::new(4),
            stats: Mutex::new(GatewayStats::default()),
        }
    }

    pub fn with_cache(mut self, cache: PromptStore) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_recorder(mut self, recorder: PromptStore) -> Self {
        self.recorder = Some(recorder);
        self
    }

    pub fn with_retry(mut self, retry: RetryConfig) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_inflight(mut self, max_inflight: usize) -> Self {
        self.inflight = Inflight::new(max_inflight);
        self
    }

    pub fn backend_name(&self) -> &'static str {
        self.backend.name()
    }

    pub fn is_deterministic(&self) -> bool {
        self.backend.is_deterministic()
    }

    pub fn stats(&self) -> GatewayStats {
        *self.stats.lock().unwrap()
    }

    pub fn complete(&self, prompt: &ChatPrompt) -> Result<CompletionResult, GatewayError> {
        let key = prompt.cache_key();
        if let Some(cache) = &self.cache {
            if let Some(text) = cache.load(&key)? {
                self.stats.lock().unwrap().cache_hits += 1;
                return Ok(CompletionResult {
                    text,
                    cached: true,
                    attempts: 0,
                });
            }
        }

        let mut attempt = 0;
        let text = loop {
            attempt += 1;
            let _permit = self.inflight.acquire();
            match self.backend.complete_raw(prompt) {
                Ok(text) => break text,
                Err(err @ GatewayError::Auth { .. })
                | Err(err @ GatewayError::ReplayMiss { .. }) => {
                    return Err(err);
                }
                Err(GatewayError::Transport { reason, .. })
                | Err(GatewayError::BadResponse(reason)) => {
                    if attempt >= self.retry.attempts {
                        return Err(GatewayError::Transport {
                            attempts: attempt,
                            reason,
                        });
                    }
                    let backoff = self
                        .retry
                        .base_delay
                        .saturating_mul(1 << (attempt - 1).min(16));
                    std::thread::sleep(backoff.min(self.retry.max_delay));
                }
            }
        };

        self.stats.lock().unwrap().completions += 1;
        let entry = StoredCompletion::new(prompt, text.clone());
        if let Some(cache) = &self.cache {
            cache.store(&key, &entry)?;
        }
        if let Some(recorder) = &self.recorder {
            recorder.store(&key, &entry)?;
        }
        Ok(CompletionResult {
            text,
            cached: false,
            attempts: attempt,
        })
    }
}

/// One arm of a proposed split, or the whole population when asking for
/// base rates at the root.
#[derive(Debug, Clone, PartialEq)]
pub enum Division {
    AllInstances,
    Narrowed(Constraint),
}

impl Division {
    pub fn render(&self) -> String {
        match self {
            Division::AllInstances => "all instances".to_string(),
            Division::Narrowed(c) => c.to_string(),
        }
    }
}

/// Typed queries the tree builder issues while growing a node.
#[derive(Debug, Clone)]
pub enum AdvisorQuery<'a> {
    ProposeNumericSplit {
        task: &'a TaskSpec,
        feature: &'a FeatureSpec,
        ctx: &'a BranchContext,
    },
    ProposeCategoricalSplit {
        task: &'a TaskSpec,
        feature: &'a FeatureSpec,
        ctx: &'a BranchContext,
        allowed: &'a [String],
    },
    EstimateProbabilities {
        task: &'a TaskSpec,
        ctx: &'a BranchContext,
        prev_probs: &'a ProbabilityDistribution,
        left: &'a Division,
        right: &'a Division,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum AdvisorAnswer {
    Threshold {
        value: f64,
    },
    Bipartition {
        group1: Vec<String>,
        group2: Vec<String>,
    },
    BranchDistributions {
        left: ProbabilityDistribution,
        right: ProbabilityDistribution,
    },
}

#[derive(Debug, Clone)]
pub struct AdvisorInfo {
    pub kind: String,
    pub model_name: Option<String>,
    pub deterministic: bool,
}

/// Knowledge source answering split and probability queries. Both the
/// prompt+parse text path and the synthetic oracle implement this.
pub trait Advisor: Send + Sync {
    fn advise(&self, query: &AdvisorQuery<'_>) -> Result<AdvisorAnswer, AdvisorError>;
    fn info(&self) -> AdvisorInfo;
    fn stats(&self) -> GatewayStats {
        GatewayStats::default()
    }
}

/// Checks that two groups partition `allowed` exactly: disjoint, non-empty,
/// nothing missing, nothing foreign.
pub fn is_exact_bipartition(group1: &[String], group2: &[String], allowed: &[String]) -> bool {
    if group1.is_empty() || group2.is_empty() {
        return false;
    }
    if group1.len() + group2.len() != allowed.len() {
        return false;
    }
    let mut seen = std::collections::HashSet::new();
    for token in group1.iter().chain(group2) {
        if !allowed.contains(token) || !seen.insert(token.clone()) {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct ScriptedBackend {
        replies: Vec<Result<String, GatewayError>>,
        calls: AtomicU32,
    }

    impl CompletionBackend for ScriptedBackend {
        fn complete_raw(&self, _prompt: &ChatPrompt) -> Result<String, GatewayError> {
            let i = self.calls.fetch_add(1, Ordering::SeqCst) as usize;
            match self.replies.get(i.min(self.replies.len() - 1)).unwrap() {
                Ok(s) => Ok(s.clone()),
                Err(GatewayError::Transport { attempts, reason }) => Err(GatewayError::Transport {
                    attempts: *attempts,
                    reason: reason.clone(),
                }),
                Err(GatewayError::Auth { reason }) => Err(GatewayError::Auth {
                    reason: reason.clone(),
                }),
                Err(_) => unreachable!(),
            }
        }

        fn name(&self) -> &'static str {
            "scripted"
        }

        fn is_deterministic(&self) -> bool {
            true
        }
    }

    fn prompt() -> ChatPrompt {
        ChatPrompt::new("s".into(), "a".into(), "u".into(), PromptParams::default())
    }

    fn fast_retry(attempts: u32) -> RetryConfig {
        RetryConfig {
            attempts,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    #[test]
    fn cache_returns_identical_text() {
        let dir = tempfile::tempdir().unwrap();
        let backend = ScriptedBackend {
            replies: vec![Ok("answer".into())],
            calls: AtomicU32::new(0),
        };
        let gw = Gateway::new(Box::new(backend))
            .with_cache(PromptStore::open(dir.path()).unwrap())
            .with_retry(fast_retry(3));
        let first = gw.complete(&prompt()).unwrap();
        assert!(!first.cached);
        assert_eq!(first.attempts, 1);
        let second = gw.complete(&prompt()).unwrap();
        assert!(second.cached);
        assert_eq!(second.text, first.text);
        let stats = gw.stats();
        assert_eq!((stats.completions, stats.cache_hits), (1, 1));
    }

    #[test]
    fn transient_failures_consume_attempts() {
        let backend = ScriptedBackend {
            replies: vec![
                Err(GatewayError::Transport {
                    attempts: 1,
                    reason: "reset".into(),
                }),
                Err(GatewayError::Transport {
                    attempts: 1,
                    reason: "reset".into(),
                }),
                Ok("ok".into()),
            ],
            calls: AtomicU32::new(0),
        };
        let gw = Gateway::new(Box::new(backend)).with_retry(fast_retry(3));
        let result = gw.complete(&prompt()).unwrap();
        assert_eq!(result.attempts, 3);
        assert_eq!(result.text, "ok");
    }

    #[test]
    fn retries_exhausted_is_transport_error() {
        let backend = ScriptedBackend {
            replies: vec![Err(GatewayError::Transport {
                attempts: 1,
                reason: "down".into(),
            })],
            calls: AtomicU32::new(0),
        };
        let gw = Gateway::new(Box::new(backend)).with_retry(fast_retry(3));
        match gw.complete(&prompt()) {
            Err(GatewayError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("expected transport error, got {other:?}"),
        }
    }

    #[test]
    fn auth_error_is_not_retried() {
        let backend = ScriptedBackend {
            replies: vec![
                Err(GatewayError::Auth {
                    reason: "bad key".into(),
                }),
                Ok("never".into()),
            ],
            calls: AtomicU32::new(0),
        };
        let gw = Gateway::new(Box::new(backend)).with_retry(fast_retry(3));
        assert!(matches!(
            gw.complete(&prompt()),
            Err(GatewayError::Auth { .. })
        ));
        let stats = gw.stats();
        assert_eq!(stats.completions, 0);
    }

    #[test]
    fn cache_key_depends_on_params() {
        let a = prompt();
        let mut b = prompt();
        b.params.temperature = 0.5;
        assert_ne!(a.cache_key(), b.cache_key());
        assert_eq!(a.cache_key(), prompt().cache_key());
    }

    #[test]
    fn bipartition_check() {
        let allowed: Vec<String> = ["red", "green", "blue"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let g = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert!(is_exact_bipartition(
            &g(&["red", "green"]),
            &g(&["blue"]),
            &allowed
        ));
        assert!(!is_exact_bipartition(
            &g(&["red"]),
            &g(&["red", "blue"]),
            &allowed
        ));
        assert!(!is_exact_bipartition(&g(&["red"]), &g(&["blue"]), &allowed));
        assert!(!is_exact_bipartition(
            &g(&[]),
            &g(&["red", "green", "blue"]),
            &allowed
        ));
    }
}
