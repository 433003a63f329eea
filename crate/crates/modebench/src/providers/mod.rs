//! Agent backends behind one uniform completion interface.
//!
//! Three kinds of provider exist:
//!
//! - [`live::LiveProvider`] talks to an OpenAI-compatible chat-completion
//!   endpoint over HTTP.
//! - [`scripted::ScriptedProvider`] replays fixture text byte-exactly,
//!   keyed by (agent, question, phase).
//! - [`synthetic::SyntheticProvider`] generates seeded transcripts whose
//!   correctness follows configured per-difficulty probabilities; together
//!   with scripted replay it makes whole runs reproducible offline.
//!
//! Every `complete` call issues exactly one underlying request. Retries are
//! the caller's business and live in [`call_with_retries`], so the retry
//! count stays observable in the run log.

pub mod live;
pub mod scripted;
pub mod synthetic;

pub use live::LiveProvider;
pub use scripted::ScriptedProvider;
pub use synthetic::{synthetic_update, SyntheticAgentParams, SyntheticProvider};

use std::collections::HashSet;
use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::modes::Prompt;

/// Capacity grouping of the backing model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Tier {
    Base,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ProviderKind {
    Live,
    Scripted,
    Synthetic,
}

/// Sampling hyperparameters sent verbatim with every live request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

fn default_temperature() -> f64 {
    0.7
}
fn default_top_p() -> f64 {
    0.95
}
fn default_max_tokens() -> u32 {
    2048
}

impl Default for SamplingParams {
    fn default() -> SamplingParams {
        SamplingParams {
            temperature: default_temperature(),
            top_p: default_top_p(),
            max_tokens: default_max_tokens(),
        }
    }
}

/// One agent's backing model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderProfile {
    pub agent_id: String,
    pub model_name: String,
    pub tier: Tier,
    pub kind: ProviderKind,
    /// Full chat-completions URL; LIVE only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub sampling: SamplingParams,
    /// Name of the environment variable holding the API key; LIVE only.
    /// Absent means the endpoint needs no authorization (local testing).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credential_ref: Option<String>,
}

/// A single completion call. Carries no conversation history: context is
/// reset per question by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt: Prompt,
    pub sampling: SamplingParams,
    pub request_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt: u32,
    pub completion: u32,
}

/// Raw outcome of one completion call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    /// Full model output. May be empty (treated downstream as an invalid
    /// answer), never absent. Models with a separate reasoning channel have
    /// it concatenated before the answer text.
    pub raw_text: String,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_usage: Option<TokenUsage>,
    /// Retries that preceded this response under the declared retry policy.
    #[serde(default)]
    pub retries: u32,
}

impl CompletionResponse {
    pub fn of_text(raw_text: impl Into<String>) -> CompletionResponse {
        CompletionResponse { raw_text: raw_text.into(), latency_ms: 0, token_usage: None, retries: 0 }
    }
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("transport error{}: {message}", status.map(|s| format!(" (status {s})")).unwrap_or_default())]
    Transport { status: Option<u16>, message: String },
    #[error("rate limited: {message}")]
    RateLimited { message: String },
    #[error("no fixture for agent {agent_id:?}, question {question_id:?}, phase {phase:?}")]
    MissingFixture { agent_id: String, question_id: String, phase: String },
    #[error("environment variable {0:?} holding the API key is not set")]
    MissingCredential(String),
    #[error("endpoint rejected the request with status {status}: {message}")]
    Rejected { status: u16, message: String },
    #[error("malformed completion response: {0}")]
    MalformedResponse(String),
    #[error("synthetic provider has no entry for question {0:?}")]
    UnknownQuestion(String),
    #[error("malformed request id {0:?}")]
    BadRequestId(String),
    #[error("peer reasoning carries no parseable answer and confidence")]
    UnparseablePeer,
    #[error("agent {agent_id:?} misconfigured: {reason}")]
    Misconfigured { agent_id: String, reason: String },
}

impl ProviderError {
    /// Transient failures worth retrying; everything else is fatal for the
    /// run (configuration, credentials, missing fixtures).
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            ProviderError::Transport { .. }
                | ProviderError::RateLimited { .. }
                | ProviderError::MalformedResponse(_)
        )
    }
}

/// Uniform completion interface. One invocation, one underlying call.
pub trait Provider: Send + Sync {
    fn complete(
        &self,
        profile: &ProviderProfile,
        request: &CompletionRequest,
    ) -> Result<CompletionResponse, ProviderError>;
}

/// The configured set of agents.
#[derive(Debug, Clone, PartialEq)]
pub struct Roster {
    profiles: Vec<ProviderProfile>,
}

impl Roster {
    /// Validates agent ids: unique, non-empty, and free of the `/`, `+`,
    /// `>` characters reserved by request ids and pair keys.
    pub fn new(profiles: Vec<ProviderProfile>) -> Result<Roster, ProviderError> {
        let mut seen = HashSet::new();
        for p in &profiles {
            if p.agent_id.is_empty() || p.agent_id.contains(['/', '+', '>']) {
                return Err(ProviderError::Misconfigured {
                    agent_id: p.agent_id.clone(),
                    reason: "agent ids must be non-empty and free of '/', '+', '>'".into(),
                });
            }
            if !seen.insert(p.agent_id.clone()) {
                return Err(ProviderError::Misconfigured {
                    agent_id: p.agent_id.clone(),
                    reason: "duplicate agent id".into(),
                });
            }
            if p.kind == ProviderKind::Live && p.endpoint.is_none() {
                return Err(ProviderError::Misconfigured {
                    agent_id: p.agent_id.clone(),
                    reason: "LIVE agents need an endpoint".into(),
                });
            }
        }
        Ok(Roster { profiles })
    }

    pub fn profiles(&self) -> &[ProviderProfile] {
        &self.profiles
    }

    pub fn get(&self, agent_id: &str) -> Option<&ProviderProfile> {
        self.profiles.iter().find(|p| p.agent_id == agent_id)
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }
}

/// Routes each call to the implementation matching the profile's kind.
#[derive(Default)]
pub struct CompositeProvider {
    pub live: Option<LiveProvider>,
    pub scripted: Option<ScriptedProvider>,
    pub synthetic: Option<SyntheticProvider>,
}

impl Provider for CompositeProvider {
    fn complete(
        &self,
        profile: &ProviderProfile,
        request: &CompletionRequest,
    ) -> Result<CompletionResponse, ProviderError> {
        let missing = |kind: &str| ProviderError::Misconfigured {
            agent_id: profile.agent_id.clone(),
            reason: format!("no {kind} provider configured"),
        };
        match profile.kind {
            ProviderKind::Live => {
                self.live.as_ref().ok_or_else(|| missing("live"))?.complete(profile, request)
            }
            ProviderKind::Scripted => self
                .scripted
                .as_ref()
                .ok_or_else(|| missing("scripted"))?
                .complete(profile, request),
            ProviderKind::Synthetic => self
                .synthetic
                .as_ref()
                .ok_or_else(|| missing("synthetic"))?
                .complete(profile, request),
        }
    }
}

/// Retry policy for transient provider failures: capped exponential backoff
/// with full jitter, applied only to retryable errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_base_delay_ms")]
    pub base_delay_ms: u64,
    #[serde(default = "default_max_delay_ms")]
    pub max_delay_ms: u64,
}

fn default_max_retries() -> u32 {
    3
}
fn default_base_delay_ms() -> u64 {
    500
}
fn default_max_delay_ms() -> u64 {
    10_000
}

impl Default for RetryPolicy {
    fn default() -> RetryPolicy {
        RetryPolicy {
            max_retries: default_max_retries(),
            base_delay_ms: default_base_delay_ms(),
            max_delay_ms: default_max_delay_ms(),
        }
    }
}

impl RetryPolicy {
    fn delay_ms(&self, attempt: u32, rng: &mut impl Rng) -> u64 {
        let cap = self
            .max_delay_ms
            .min(self.base_delay_ms.saturating_mul(1u64 << attempt.min(20)));
        if cap == 0 {
            0
        } else {
            rng.gen_range(0..=cap)
        }
    }
}

/// Derives a deterministic RNG from a seed and a request identity.
pub(crate) fn rng_for(seed: u64, tag: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Calls `complete`, retrying retryable failures up to the policy's limit.
///
/// The retry count rides back on the response so it lands in the run log.
/// Returns the final error when retries are exhausted or the failure is
/// fatal.
pub fn call_with_retries(
    provider: &dyn Provider,
    profile: &ProviderProfile,
    request: &CompletionRequest,
    policy: &RetryPolicy,
) -> Result<CompletionResponse, ProviderError> {
    let mut jitter = rng_for(0, &format!("retry/{}", request.request_id));
    let mut attempt = 0u32;
    loop {
        match provider.complete(profile, request) {
            Ok(mut response) => {
                response.retries = attempt;
                return Ok(response);
            }
            Err(err) if err.is_retryable() && attempt < policy.max_retries => {
                let delay = policy.delay_ms(attempt, &mut jitter);
                log::warn!(
                    "retry {}/{} for {} after {err} (sleeping {delay} ms)",
                    attempt + 1,
                    policy.max_retries,
                    request.request_id
                );
                std::thread::sleep(std::time::Duration::from_millis(delay));
                attempt += 1;
            }
            Err(err) => return Err(err),
        }
    }
}

impl fmt::Debug for CompositeProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CompositeProvider")
            .field("live", &self.live.is_some())
            .field("scripted", &self.scripted.is_some())
            .field("synthetic", &self.synthetic.is_some())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modes::Phase;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn profile(kind: ProviderKind) -> ProviderProfile {
        ProviderProfile {
            agent_id: "a1".into(),
            model_name: "m".into(),
            tier: Tier::Base,
            kind,
            endpoint: None,
            sampling: SamplingParams::default(),
            credential_ref: None,
        }
    }

    fn request() -> CompletionRequest {
        CompletionRequest {
            prompt: Prompt {
                text: "t".into(),
                question_id: "q1".into(),
                phase: Phase::Initial,
                attached_reasoning: None,
            },
            sampling: SamplingParams::default(),
            request_id: "solo/r1/q1/-/a1/initial".into(),
        }
    }

    struct FlakyProvider {
        failures: u32,
        calls: AtomicU32,
    }

    impl Provider for FlakyProvider {
        fn complete(
            &self,
            _profile: &ProviderProfile,
            _request: &CompletionRequest,
        ) -> Result<CompletionResponse, ProviderError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(ProviderError::RateLimited { message: "slow down".into() })
            } else {
                Ok(CompletionResponse::of_text("Answer: A"))
            }
        }
    }

    #[test]
    fn retries_transient_failures_then_succeeds() {
        let provider = FlakyProvider { failures: 2, calls: AtomicU32::new(0) };
        let policy = RetryPolicy { max_retries: 3, base_delay_ms: 0, max_delay_ms: 0 };
        let response =
            call_with_retries(&provider, &profile(ProviderKind::Scripted), &request(), &policy)
                .unwrap();
        assert_eq!(response.retries, 2);
        assert_eq!(provider.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn exhausted_retries_surface_the_last_error() {
        let provider = FlakyProvider { failures: 10, calls: AtomicU32::new(0) };
        let policy = RetryPolicy { max_retries: 3, base_delay_ms: 0, max_delay_ms: 0 };
        let err =
            call_with_retries(&provider, &profile(ProviderKind::Scripted), &request(), &policy)
                .unwrap_err();
        assert!(err.is_retryable());
        // initial attempt + 3 retries
        assert_eq!(provider.calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn fatal_errors_are_not_retried() {
        struct Fatal;
        impl Provider for Fatal {
            fn complete(
                &self,
                _p: &ProviderProfile,
                _r: &CompletionRequest,
            ) -> Result<CompletionResponse, ProviderError> {
                Err(ProviderError::MissingCredential("KEY".into()))
            }
        }
        let policy = RetryPolicy::default();
        let err = call_with_retries(&Fatal, &profile(ProviderKind::Live), &request(), &policy)
            .unwrap_err();
        assert!(!err.is_retryable());
    }

    #[test]
    fn roster_rejects_reserved_characters_and_duplicates() {
        let mut bad = profile(ProviderKind::Scripted);
        bad.agent_id = "a/1".into();
        assert!(Roster::new(vec![bad]).is_err());

        let dup = vec![profile(ProviderKind::Scripted), profile(ProviderKind::Scripted)];
        assert!(Roster::new(dup).is_err());

        let live = profile(ProviderKind::Live);
        assert!(Roster::new(vec![live]).is_err(), "LIVE without endpoint");
    }

    #[test]
    fn seeded_rng_is_stable_per_tag() {
        let a: u64 = rng_for(1, "x").gen();
        let b: u64 = rng_for(1, "x").gen();
        let c: u64 = rng_for(1, "y").gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
