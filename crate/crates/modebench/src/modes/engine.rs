//! Execution of the three communication modes.
//!
//! Work is organized in (round, question) units. Within a unit all INITIAL
//! calls may run concurrently, then all UPDATE calls; the unit's records are
//! returned in canonical order so the persisted log never depends on
//! scheduling. A unit can be re-executed against previously persisted
//! records: present records are reused (their reasoning feeds dependent
//! updates) and only missing calls are issued, which is what makes runs
//! resumable.

use std::collections::BTreeMap;

use thiserror::Error;

use super::{
    build_prompt, extract_answer, CanonicalKey, ExchangeRecord, Mode, Phase, RequestKey,
};
use crate::corpus::Question;
use crate::providers::{
    call_with_retries, CompletionRequest, CompletionResponse, Provider, ProviderError,
    RetryPolicy, Roster,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("{mode} needs at least {required} agents, roster has {actual}")]
    InsufficientRoster { mode: Mode, required: usize, actual: usize },
    #[error("repeat count must be at least 1")]
    InvalidRounds,
    #[error("agent {0:?} missing from roster")]
    UnknownAgent(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Agent tuples executed per (round, question).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Pairing {
    /// SOLO: one agent answering alone.
    Single { agent: String },
    /// MONO: the learner revises after reading the mentor.
    Directed { learner: String, mentor: String },
    /// ECHO: an unordered pair that swaps reasoning; stored with
    /// `first` < `second` lexicographically.
    Mutual { first: String, second: String },
}

/// The full pairing layout for one mode, a pure function of (roster, mode).
///
/// The algorithms iterate all pairs exhaustively, so no randomness enters
/// here; seeds only drive synthetic agents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairingPlan {
    pub mode: Mode,
    pub pairings: Vec<Pairing>,
}

impl PairingPlan {
    pub fn build(mode: Mode, roster: &Roster) -> Result<PairingPlan, EngineError> {
        let ids: Vec<&str> = roster.profiles().iter().map(|p| p.agent_id.as_str()).collect();
        let required = match mode {
            Mode::Solo => 1,
            Mode::Mono | Mode::Echo => 2,
        };
        if ids.len() < required {
            return Err(EngineError::InsufficientRoster {
                mode,
                required,
                actual: ids.len(),
            });
        }
        let pairings = match mode {
            Mode::Solo => {
                ids.iter().map(|a| Pairing::Single { agent: a.to_string() }).collect()
            }
            Mode::Mono => {
                let mut out = Vec::new();
                for learner in &ids {
                    for mentor in &ids {
                        if learner != mentor {
                            out.push(Pairing::Directed {
                                learner: learner.to_string(),
                                mentor: mentor.to_string(),
                            });
                        }
                    }
                }
                out
            }
            Mode::Echo => {
                let mut out = Vec::new();
                for i in 0..ids.len() {
                    for j in (i + 1)..ids.len() {
                        let (lo, hi) = if ids[i] <= ids[j] {
                            (ids[i], ids[j])
                        } else {
                            (ids[j], ids[i])
                        };
                        out.push(Pairing::Mutual { first: lo.to_string(), second: hi.to_string() });
                    }
                }
                out
            }
        };
        Ok(PairingPlan { mode, pairings })
    }
}

/// One (round, question) execution unit.
#[derive(Debug, Clone, Copy)]
pub struct PlannedUnit<'a> {
    pub mode: Mode,
    pub round: u32,
    pub question: &'a Question,
    pub question_index: u32,
}

/// Records of one unit in canonical order.
pub type UnitOutput = Vec<(CanonicalKey, ExchangeRecord)>;

#[derive(Debug, Clone)]
struct CallSpec {
    key: RequestKey,
    counterpart: Option<String>,
    peer_reasoning: Option<String>,
}

fn canonical_of(spec: &CallSpec, unit: &PlannedUnit) -> CanonicalKey {
    CanonicalKey {
        mode: unit.mode,
        round: unit.round,
        question_index: unit.question_index,
        pair_key: spec.key.pair_key.clone(),
        agent_id: spec.key.agent_id.clone(),
        phase: spec.key.phase,
    }
}

fn initial_specs(unit: &PlannedUnit, plan: &PairingPlan) -> Vec<CallSpec> {
    let key = |pair_key: &str, agent: &str| RequestKey {
        mode: unit.mode,
        round: unit.round,
        question_id: unit.question.id.clone(),
        pair_key: pair_key.to_string(),
        agent_id: agent.to_string(),
        phase: Phase::Initial,
    };
    match unit.mode {
        Mode::Solo => plan
            .pairings
            .iter()
            .map(|p| match p {
                Pairing::Single { agent } => {
                    CallSpec { key: key("", agent), counterpart: None, peer_reasoning: None }
                }
                _ => unreachable!("solo plan holds singles"),
            })
            .collect(),
        Mode::Mono => {
            // Each mentor answers once per unit; the answer is shared by all
            // of its learners and never revised.
            let mut seen = std::collections::HashSet::new();
            let mut out = Vec::new();
            for p in &plan.pairings {
                if let Pairing::Directed { mentor, .. } = p {
                    if seen.insert(mentor.clone()) {
                        out.push(CallSpec {
                            key: key("", mentor),
                            counterpart: None,
                            peer_reasoning: None,
                        });
                    }
                }
            }
            out
        }
        Mode::Echo => {
            let mut out = Vec::new();
            for p in &plan.pairings {
                if let Pairing::Mutual { first, second } = p {
                    let pair = format!("{first}+{second}");
                    out.push(CallSpec {
                        key: key(&pair, first),
                        counterpart: Some(second.clone()),
                        peer_reasoning: None,
                    });
                    out.push(CallSpec {
                        key: key(&pair, second),
                        counterpart: Some(first.clone()),
                        peer_reasoning: None,
                    });
                }
            }
            out
        }
    }
}

fn update_specs(
    unit: &PlannedUnit,
    plan: &PairingPlan,
    initial_reasoning: &BTreeMap<(String, String), String>,
) -> Result<Vec<CallSpec>, EngineError> {
    let key = |pair_key: &str, agent: &str| RequestKey {
        mode: unit.mode,
        round: unit.round,
        question_id: unit.question.id.clone(),
        pair_key: pair_key.to_string(),
        agent_id: agent.to_string(),
        phase: Phase::Update,
    };
    let lookup = |pair_key: &str, agent: &str| -> Result<String, EngineError> {
        initial_reasoning
            .get(&(pair_key.to_string(), agent.to_string()))
            .cloned()
            .ok_or_else(|| EngineError::UnknownAgent(agent.to_string()))
    };
    let mut out = Vec::new();
    match unit.mode {
        Mode::Solo => {}
        Mode::Mono => {
            for p in &plan.pairings {
                if let Pairing::Directed { learner, mentor } = p {
                    let rc = lookup("", mentor)?;
                    out.push(CallSpec {
                        key: key(&format!("{learner}>{mentor}"), learner),
                        counterpart: Some(mentor.clone()),
                        peer_reasoning: Some(rc),
                    });
                }
            }
        }
        Mode::Echo => {
            for p in &plan.pairings {
                if let Pairing::Mutual { first, second } = p {
                    let pair = format!("{first}+{second}");
                    let rc_first = lookup(&pair, first)?;
                    let rc_second = lookup(&pair, second)?;
                    out.push(CallSpec {
                        key: key(&pair, first),
                        counterpart: Some(second.clone()),
                        peer_reasoning: Some(rc_second),
                    });
                    out.push(CallSpec {
                        key: key(&pair, second),
                        counterpart: Some(first.clone()),
                        peer_reasoning: Some(rc_first),
                    });
                }
            }
        }
    }
    Ok(out)
}

fn run_call(
    spec: &CallSpec,
    unit: &PlannedUnit,
    roster: &Roster,
    provider: &dyn Provider,
    retry: &RetryPolicy,
) -> Result<ExchangeRecord, EngineError> {
    let profile = roster
        .get(&spec.key.agent_id)
        .ok_or_else(|| EngineError::UnknownAgent(spec.key.agent_id.clone()))?;
    let prompt = build_prompt(unit.question, spec.key.phase, spec.peer_reasoning.as_deref());
    let request = CompletionRequest {
        prompt,
        sampling: profile.sampling.clone(),
        request_id: spec.key.render(),
    };
    let raw = match call_with_retries(provider, profile, &request, retry) {
        Ok(response) => response,
        Err(err) if err.is_retryable() => {
            // Retries exhausted on a transient failure: keep the attempt in
            // the log as an invalid answer so cardinalities stay intact.
            log::warn!("{} failed after retries: {err}; recording invalid answer", request.request_id);
            CompletionResponse {
                raw_text: String::new(),
                latency_ms: 0,
                token_usage: None,
                retries: retry.max_retries,
            }
        }
        Err(err) => return Err(EngineError::Provider(err)),
    };
    let answer = extract_answer(&raw.raw_text);
    Ok(ExchangeRecord {
        run_round: unit.round,
        question_id: unit.question.id.clone(),
        mode: unit.mode,
        agent_id: spec.key.agent_id.clone(),
        counterpart_id: spec.counterpart.clone(),
        phase: spec.key.phase,
        reasoning: raw.raw_text.clone(),
        answer,
        correct: answer.matches(unit.question.gold),
        raw,
        timestamp: 0,
    })
}

fn resolve_specs(
    specs: &[CallSpec],
    unit: &PlannedUnit,
    roster: &Roster,
    provider: &dyn Provider,
    retry: &RetryPolicy,
    pool: Option<&rayon::ThreadPool>,
    existing: &BTreeMap<CanonicalKey, ExchangeRecord>,
) -> Result<Vec<ExchangeRecord>, EngineError> {
    let run_one = |spec: &CallSpec| -> Result<ExchangeRecord, EngineError> {
        match existing.get(&canonical_of(spec, unit)) {
            Some(record) => Ok(record.clone()),
            None => run_call(spec, unit, roster, provider, retry),
        }
    };
    match pool {
        Some(pool) => pool.install(|| {
            use rayon::prelude::*;
            specs.par_iter().map(run_one).collect()
        }),
        None => specs.iter().map(run_one).collect(),
    }
}

/// Executes one (round, question) unit, reusing any records already present
/// in `existing` and generating the rest. UPDATE calls always see the
/// reasoning produced (or reused) by their prerequisite INITIAL calls.
pub fn execute_unit(
    unit: &PlannedUnit,
    plan: &PairingPlan,
    roster: &Roster,
    provider: &dyn Provider,
    retry: &RetryPolicy,
    pool: Option<&rayon::ThreadPool>,
    existing: &BTreeMap<CanonicalKey, ExchangeRecord>,
) -> Result<UnitOutput, EngineError> {
    let init = initial_specs(unit, plan);
    let initial_records = resolve_specs(&init, unit, roster, provider, retry, pool, existing)?;

    let mut reasoning = BTreeMap::new();
    for record in &initial_records {
        reasoning.insert(
            (record.pair_key(), record.agent_id.clone()),
            record.reasoning.clone(),
        );
    }
    let updates = update_specs(unit, plan, &reasoning)?;
    let update_records = resolve_specs(&updates, unit, roster, provider, retry, pool, existing)?;

    let mut out: UnitOutput = initial_records
        .into_iter()
        .chain(update_records)
        .map(|record| {
            let index = unit.question_index;
            (CanonicalKey::of(&record, index), record)
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

fn run_mode(
    mode: Mode,
    roster: &Roster,
    questions: &[Question],
    rounds: u32,
    provider: &dyn Provider,
) -> Result<Vec<ExchangeRecord>, EngineError> {
    if rounds < 1 {
        return Err(EngineError::InvalidRounds);
    }
    let plan = PairingPlan::build(mode, roster)?;
    let retry = RetryPolicy::default();
    let empty = BTreeMap::new();
    let mut records = Vec::new();
    for round in 1..=rounds {
        for (index, question) in questions.iter().enumerate() {
            let unit = PlannedUnit { mode, round, question, question_index: index as u32 };
            let output = execute_unit(&unit, &plan, roster, provider, &retry, None, &empty)?;
            records.extend(output.into_iter().map(|(_, r)| r));
        }
    }
    for (i, record) in records.iter_mut().enumerate() {
        record.timestamp = i as u64;
    }
    Ok(records)
}

/// Runs every agent alone over all questions for `rounds` rounds.
/// Produces exactly rounds × |questions| × |roster| INITIAL records.
pub fn run_solo(
    roster: &Roster,
    questions: &[Question],
    rounds: u32,
    provider: &dyn Provider,
) -> Result<Vec<ExchangeRecord>, EngineError> {
    run_mode(Mode::Solo, roster, questions, rounds, provider)
}

/// Runs every ordered (learner, mentor) pair with distinct agents. Each
/// mentor answers once per (round, question); learners revise with the
/// mentor's reasoning attached, giving rounds × |questions| × M × (M−1)
/// learner UPDATE records.
pub fn run_mono(
    roster: &Roster,
    questions: &[Question],
    rounds: u32,
    provider: &dyn Provider,
) -> Result<Vec<ExchangeRecord>, EngineError> {
    run_mode(Mode::Mono, roster, questions, rounds, provider)
}

/// Runs every unordered pair: both agents answer, swap reasoning, and both
/// revise, giving rounds × |questions| × C(M,2) × 2 UPDATE records.
pub fn run_echo(
    roster: &Roster,
    questions: &[Question],
    rounds: u32,
    provider: &dyn Provider,
) -> Result<Vec<ExchangeRecord>, EngineError> {
    run_mode(Mode::Echo, roster, questions, rounds, provider)
}
