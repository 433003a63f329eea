//! Seeded synthetic agents for offline verification of mode dynamics.
//!
//! A synthetic agent answers correctly with a per-difficulty probability and
//! reports a confidence drawn from a truncated normal around a tier mean
//! (higher when it happens to be right). On an exchange it adopts the peer's
//! answer exactly when the peer's stated confidence beats its own. Every
//! draw is a pure function of (agent seed, request id), so runs are
//! reproducible under any concurrency and updates can re-derive the agent's
//! own earlier state without shared memory.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    rng_for, CompletionRequest, CompletionResponse, Provider, ProviderError, ProviderProfile,
};
use crate::corpus::{DifficultyLabel, Label};
use crate::modes::{extract_answer, ExchangeRecord, Phase, RequestKey};

/// Behaviour knobs for one synthetic agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticAgentParams {
    /// Probability of answering correctly per difficulty bin.
    #[serde(default)]
    pub p_correct: BTreeMap<DifficultyLabel, f64>,
    /// Used for questions without a difficulty label (e.g. calibration).
    #[serde(default = "default_p")]
    pub p_correct_default: f64,
    #[serde(default = "default_correct_mean")]
    pub confidence_correct_mean: f64,
    #[serde(default = "default_wrong_mean")]
    pub confidence_wrong_mean: f64,
    /// Standard deviation of the confidence draw; zero makes confidences
    /// exactly the means.
    #[serde(default)]
    pub confidence_noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_p() -> f64 {
    0.5
}
fn default_correct_mean() -> f64 {
    0.8
}
fn default_wrong_mean() -> f64 {
    0.2
}

impl Default for SyntheticAgentParams {
    fn default() -> SyntheticAgentParams {
        SyntheticAgentParams {
            p_correct: BTreeMap::new(),
            p_correct_default: 0.5,
            confidence_correct_mean: 0.8,
            confidence_wrong_mean: 0.2,
            confidence_noise: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticAgentParams {
    fn p_correct_for(&self, difficulty: Option<DifficultyLabel>) -> f64 {
        difficulty
            .and_then(|d| self.p_correct.get(&d).copied())
            .unwrap_or(self.p_correct_default)
    }
}

/// Gold answer and difficulty per question id, fixed at construction.
pub type QuestionIndex = BTreeMap<String, (Label, Option<DifficultyLabel>)>;

/// Stateless synthetic backend serving any number of agents.
#[derive(Debug, Clone, Default)]
pub struct SyntheticProvider {
    params: BTreeMap<String, SyntheticAgentParams>,
    questions: QuestionIndex,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Draw {
    answer: Label,
    confidence: f64,
}

impl SyntheticProvider {
    pub fn new(
        params: BTreeMap<String, SyntheticAgentParams>,
        questions: QuestionIndex,
    ) -> SyntheticProvider {
        SyntheticProvider { params, questions }
    }

    fn params_for(&self, agent_id: &str) -> Result<&SyntheticAgentParams, ProviderError> {
        self.params.get(agent_id).ok_or_else(|| ProviderError::Misconfigured {
            agent_id: agent_id.to_string(),
            reason: "no synthetic parameters configured".into(),
        })
    }

    /// The agent's answer and confidence for an INITIAL call, derived
    /// entirely from (seed, request id).
    fn draw_initial(
        &self,
        params: &SyntheticAgentParams,
        key: &RequestKey,
    ) -> Result<Draw, ProviderError> {
        let (gold, difficulty) = self
            .questions
            .get(&key.question_id)
            .ok_or_else(|| ProviderError::UnknownQuestion(key.question_id.clone()))?;
        let mut rng = rng_for(params.seed, &key.render());
        let correct = rng.gen::<f64>() < params.p_correct_for(*difficulty);
        let answer = if correct {
            *gold
        } else {
            let others: Vec<Label> =
                Label::ALL.iter().copied().filter(|l| l != gold).collect();
            others[rng.gen_range(0..others.len())]
        };
        let mean = if correct {
            params.confidence_correct_mean
        } else {
            params.confidence_wrong_mean
        };
        let confidence = draw_confidence(&mut rng, mean, params.confidence_noise);
        Ok(Draw { answer, confidence })
    }
}

fn draw_confidence(rng: &mut impl Rng, mean: f64, noise: f64) -> f64 {
    if noise == 0.0 {
        return mean.clamp(0.0, 1.0);
    }
    let normal = Normal::new(mean, noise).expect("finite confidence parameters");
    // truncate to [0,1] by rejection, bounded
    for _ in 0..64 {
        let x = normal.sample(rng);
        if (0.0..=1.0).contains(&x) {
            return x;
        }
    }
    mean.clamp(0.0, 1.0)
}

fn initial_transcript(question_id: &str, draw: &Draw) -> String {
    format!(
        "Deliberating on question {question_id}: weighing each option against what I recall. \
Confidence: {:.6}.\nAnswer: {}",
        draw.confidence, draw.answer
    )
}

fn update_transcript(question_id: &str, own: &Draw, peer: &Draw, adopt: bool) -> String {
    if adopt {
        format!(
            "Reconsidering question {question_id}: the peer argues with confidence {:.6}, \
above my {:.6}, so I follow their choice. Confidence: {:.6}.\nAnswer: {}",
            peer.confidence, own.confidence, peer.confidence, peer.answer
        )
    } else {
        format!(
            "Reconsidering question {question_id}: the peer's confidence {:.6} does not \
beat mine. Confidence: {:.6}.\nAnswer: {}",
            peer.confidence, own.confidence, own.answer
        )
    }
}

fn confidence_regex() -> &'static regex::Regex {
    static RE: std::sync::OnceLock<regex::Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| {
        regex::Regex::new(r"(?i)confidence[:：]?\s*(?:is\s*)?([01](?:\.\d+)?)").unwrap()
    })
}

/// Last stated confidence in a transcript, if any.
pub fn parse_confidence(text: &str) -> Option<f64> {
    confidence_regex()
        .captures_iter(text)
        .last()
        .and_then(|c| c[1].parse::<f64>().ok())
}

fn parse_peer(text: &str) -> Result<(Label, f64), ProviderError> {
    let answer = extract_answer(text).as_label().ok_or(ProviderError::UnparseablePeer)?;
    let confidence = parse_confidence(text).ok_or(ProviderError::UnparseablePeer)?;
    Ok((answer, confidence))
}

/// The exchange decision rule: adopt the peer's answer exactly when the
/// peer's stated confidence is strictly greater than the agent's own.
///
/// `own` is the agent's earlier record; `peer_reasoning` the counterpart's
/// transcript. Unparseable peers leave the own answer standing (the caller
/// logs the fallback). The returned label is always one of A–D.
pub fn synthetic_update(
    own: &ExchangeRecord,
    peer_reasoning: &str,
) -> Result<Label, ProviderError> {
    let (peer_label, peer_conf) = parse_peer(peer_reasoning)?;
    match (own.answer.as_label(), parse_confidence(&own.reasoning)) {
        (Some(own_label), Some(own_conf)) => {
            Ok(if peer_conf > own_conf { peer_label } else { own_label })
        }
        // No own confidence to compare against: keep the standing answer.
        (Some(own_label), None) => Ok(own_label),
        // Own record unreadable: follow the readable peer.
        (None, _) => Ok(peer_label),
    }
}

impl Provider for SyntheticProvider {
    fn complete(
        &self,
        profile: &ProviderProfile,
        request: &CompletionRequest,
    ) -> Result<CompletionResponse, ProviderError> {
        let params = self.params_for(&profile.agent_id)?;
        let key: RequestKey = request
            .request_id
            .parse()
            .map_err(|_| ProviderError::BadRequestId(request.request_id.clone()))?;
        match request.prompt.phase {
            Phase::Initial => {
                let draw = self.draw_initial(params, &key)?;
                Ok(CompletionResponse::of_text(initial_transcript(&key.question_id, &draw)))
            }
            Phase::Update => {
                let own = self.draw_initial(params, &key.initial_counterpart())?;
                let peer_text = request
                    .prompt
                    .attached_reasoning
                    .as_deref()
                    .ok_or(ProviderError::UnparseablePeer)?;
                let text = match parse_peer(peer_text) {
                    Ok((peer_answer, peer_confidence)) => {
                        let peer = Draw { answer: peer_answer, confidence: peer_confidence };
                        let adopt = peer.confidence > own.confidence;
                        update_transcript(&key.question_id, &own, &peer, adopt)
                    }
                    Err(_) => {
                        log::warn!(
                            "unparseable peer reasoning for {}; keeping own answer",
                            request.request_id
                        );
                        format!(
                            "Reconsidering question {}: the peer's note is unreadable, \
so I stay with my choice. Confidence: {:.6}.\nAnswer: {}",
                            key.question_id, own.confidence, own.answer
                        )
                    }
                };
                Ok(CompletionResponse::of_text(text))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modes::{Answer, Mode, Prompt};
    use crate::providers::{ProviderKind, SamplingParams, Tier};

    fn provider(p_default: f64, noise: f64) -> SyntheticProvider {
        let mut params = BTreeMap::new();
        params.insert(
            "a1".to_string(),
            SyntheticAgentParams {
                p_correct_default: p_default,
                confidence_noise: noise,
                seed: 11,
                ..SyntheticAgentParams::default()
            },
        );
        let mut questions = QuestionIndex::new();
        for i in 0..50 {
            questions.insert(format!("q{i}"), (Label::B, Some(DifficultyLabel::Low)));
        }
        SyntheticProvider::new(params, questions)
    }

    fn profile() -> ProviderProfile {
        ProviderProfile {
            agent_id: "a1".into(),
            model_name: "synthetic".into(),
            tier: Tier::Base,
            kind: ProviderKind::Synthetic,
            endpoint: None,
            sampling: SamplingParams::default(),
            credential_ref: None,
        }
    }

    fn initial_request(question_id: &str) -> CompletionRequest {
        let key = RequestKey {
            mode: Mode::Solo,
            round: 1,
            question_id: question_id.into(),
            pair_key: String::new(),
            agent_id: "a1".into(),
            phase: Phase::Initial,
        };
        CompletionRequest {
            prompt: Prompt {
                text: "prompt".into(),
                question_id: question_id.into(),
                phase: Phase::Initial,
                attached_reasoning: None,
            },
            sampling: SamplingParams::default(),
            request_id: key.render(),
        }
    }

    #[test]
    fn always_correct_when_p_is_one() {
        let provider = provider(1.0, 0.0);
        for i in 0..50 {
            let response =
                provider.complete(&profile(), &initial_request(&format!("q{i}"))).unwrap();
            assert_eq!(extract_answer(&response.raw_text), Answer::B);
        }
    }

    #[test]
    fn identical_seed_and_request_give_identical_transcripts() {
        let provider = provider(0.5, 0.1);
        let a = provider.complete(&profile(), &initial_request("q1")).unwrap();
        let b = provider.complete(&profile(), &initial_request("q1")).unwrap();
        assert_eq!(a, b);
        let c = provider.complete(&profile(), &initial_request("q2")).unwrap();
        assert_ne!(a.raw_text, c.raw_text);
    }

    #[test]
    fn transcripts_expose_confidence_and_answer() {
        let provider = provider(1.0, 0.0);
        let response = provider.complete(&profile(), &initial_request("q1")).unwrap();
        assert_eq!(parse_confidence(&response.raw_text), Some(0.8));
        assert_eq!(extract_answer(&response.raw_text), Answer::B);
    }

    fn own_record(answer: Answer, confidence: f64) -> ExchangeRecord {
        ExchangeRecord {
            run_round: 1,
            question_id: "q1".into(),
            mode: Mode::Echo,
            agent_id: "a1".into(),
            counterpart_id: Some("a2".into()),
            phase: Phase::Initial,
            reasoning: format!("Confidence: {confidence:.6}.\nAnswer: {answer}"),
            answer,
            correct: false,
            raw: CompletionResponse::of_text(""),
            timestamp: 0,
        }
    }

    #[test]
    fn keeps_own_answer_when_more_confident() {
        let own = own_record(Answer::A, 0.9);
        let peer = "Confidence: 0.400000.\nAnswer: D";
        assert_eq!(synthetic_update(&own, peer).unwrap(), Label::A);
    }

    #[test]
    fn adopts_peer_answer_when_less_confident() {
        let own = own_record(Answer::A, 0.4);
        let peer = "Confidence: 0.900000.\nAnswer: D";
        assert_eq!(synthetic_update(&own, peer).unwrap(), Label::D);
    }

    #[test]
    fn equal_confidence_keeps_own_answer() {
        let own = own_record(Answer::C, 0.5);
        let peer = "Confidence: 0.500000.\nAnswer: B";
        assert_eq!(synthetic_update(&own, peer).unwrap(), Label::C);
    }

    #[test]
    fn unparseable_peer_keeps_own_answer_via_provider_path() {
        let provider = provider(1.0, 0.0);
        let key = RequestKey {
            mode: Mode::Echo,
            round: 1,
            question_id: "q1".into(),
            pair_key: "a1+a2".into(),
            agent_id: "a1".into(),
            phase: Phase::Update,
        };
        let request = CompletionRequest {
            prompt: Prompt {
                text: "prompt".into(),
                question_id: "q1".into(),
                phase: Phase::Update,
                attached_reasoning: Some("???".into()),
            },
            sampling: SamplingParams::default(),
            request_id: key.render(),
        };
        let response = provider.complete(&profile(), &request).unwrap();
        // p_correct = 1.0, so the kept answer is the gold B
        assert_eq!(extract_answer(&response.raw_text), Answer::B);
    }

    #[test]
    fn unparseable_peer_errors_in_the_standalone_rule() {
        let own = own_record(Answer::A, 0.4);
        let err = synthetic_update(&own, "no structure here").unwrap_err();
        assert!(matches!(err, ProviderError::UnparseablePeer));
    }
}
