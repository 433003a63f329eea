//! Deterministic replay from fixture files.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CompletionRequest, CompletionResponse, Provider, ProviderError, ProviderProfile};
use crate::modes::Phase;

/// One fixture line: the exact text an agent "produces" for a question in a
/// given phase, across all rounds and pairings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub agent_id: String,
    pub question_id: String,
    /// `initial` or `update`.
    pub phase: String,
    pub text: String,
}

/// Replays fixture text byte-exactly, keyed by (agent, question, phase).
#[derive(Debug, Default, Clone)]
pub struct ScriptedProvider {
    fixtures: HashMap<(String, String, Phase), String>,
}

impl ScriptedProvider {
    pub fn new() -> ScriptedProvider {
        ScriptedProvider::default()
    }

    pub fn insert(&mut self, agent_id: &str, question_id: &str, phase: Phase, text: &str) {
        self.fixtures
            .insert((agent_id.to_string(), question_id.to_string(), phase), text.to_string());
    }

    pub fn len(&self) -> usize {
        self.fixtures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixtures.is_empty()
    }

    /// Absorbs another provider's fixtures; later entries win on key clashes.
    pub fn merge(&mut self, other: ScriptedProvider) {
        self.fixtures.extend(other.fixtures);
    }

    /// Loads a JSONL fixture file of
    /// `{"agent_id":…, "question_id":…, "phase":"initial"|"update", "text":…}`.
    pub fn load(path: &Path) -> Result<ScriptedProvider, ProviderError> {
        let file = File::open(path).map_err(|e| ProviderError::Misconfigured {
            agent_id: String::new(),
            reason: format!("cannot open fixtures {}: {e}", path.display()),
        })?;
        let mut provider = ScriptedProvider::new();
        for (line_no, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| ProviderError::Misconfigured {
                agent_id: String::new(),
                reason: format!("cannot read fixtures {}: {e}", path.display()),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureEntry =
                serde_json::from_str(&line).map_err(|e| ProviderError::Misconfigured {
                    agent_id: String::new(),
                    reason: format!("fixtures {} line {}: {e}", path.display(), line_no + 1),
                })?;
            let phase = match entry.phase.as_str() {
                "initial" => Phase::Initial,
                "update" => Phase::Update,
                other => {
                    return Err(ProviderError::Misconfigured {
                        agent_id: entry.agent_id,
                        reason: format!("fixture phase {other:?} is not initial|update"),
                    })
                }
            };
            provider.insert(&entry.agent_id, &entry.question_id, phase, &entry.text);
        }
        Ok(provider)
    }
}

impl Provider for ScriptedProvider {
    fn complete(
        &self,
        profile: &ProviderProfile,
        request: &CompletionRequest,
    ) -> Result<CompletionResponse, ProviderError> {
        let key = (
            profile.agent_id.clone(),
            request.prompt.question_id.clone(),
            request.prompt.phase,
        );
        match self.fixtures.get(&key) {
            Some(text) => Ok(CompletionResponse::of_text(text.clone())),
            None => Err(ProviderError::MissingFixture {
                agent_id: profile.agent_id.clone(),
                question_id: request.prompt.question_id.clone(),
                phase: request.prompt.phase.token().to_string(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modes::Prompt;
    use crate::providers::{ProviderKind, SamplingParams, Tier};
    use std::io::Write;

    fn profile() -> ProviderProfile {
        ProviderProfile {
            agent_id: "a1".into(),
            model_name: "m".into(),
            tier: Tier::Base,
            kind: ProviderKind::Scripted,
            endpoint: None,
            sampling: SamplingParams::default(),
            credential_ref: None,
        }
    }

    fn request(question_id: &str, phase: Phase) -> CompletionRequest {
        CompletionRequest {
            prompt: Prompt {
                text: "prompt".into(),
                question_id: question_id.into(),
                phase,
                attached_reasoning: None,
            },
            sampling: SamplingParams::default(),
            request_id: "id".into(),
        }
    }

    #[test]
    fn replays_fixture_text_byte_exactly() {
        let mut provider = ScriptedProvider::new();
        let text = "exact reasoning…\nAnswer: B";
        provider.insert("a1", "q1", Phase::Initial, text);
        let response = provider.complete(&profile(), &request("q1", Phase::Initial)).unwrap();
        assert_eq!(response.raw_text, text);
        assert_eq!(response.latency_ms, 0);
    }

    #[test]
    fn missing_fixture_is_fatal() {
        let provider = ScriptedProvider::new();
        let err = provider.complete(&profile(), &request("q9", Phase::Update)).unwrap_err();
        assert!(matches!(err, ProviderError::MissingFixture { ref question_id, .. } if question_id == "q9"));
        assert!(!err.is_retryable());
    }

    #[test]
    fn loads_jsonl_fixture_files() {
        let mut tmp = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            tmp,
            r#"{{"agent_id":"a1","question_id":"q1","phase":"initial","text":"Answer: C"}}"#
        )
        .unwrap();
        writeln!(
            tmp,
            r#"{{"agent_id":"a1","question_id":"q1","phase":"update","text":"Answer: D"}}"#
        )
        .unwrap();
        let provider = ScriptedProvider::load(tmp.path()).unwrap();
        assert_eq!(provider.len(), 2);
        let response = provider.complete(&profile(), &request("q1", Phase::Update)).unwrap();
        assert_eq!(response.raw_text, "Answer: D");
    }
}
