//! Communication-mode engines, prompt construction, and answer extraction.
//!
//! The three engines share one record shape:
//!
//! - **Solo** — every agent answers every question alone; one INITIAL record
//!   per (round, question, agent).
//! - **Mono** — for every ordered (learner, mentor) pair with distinct
//!   agents, the mentor answers once per (round, question) and the learner
//!   answers an UPDATE prompt carrying the mentor's reasoning. Mentor
//!   answers are never revised.
//! - **Echo** — for every unordered pair, both agents answer independently,
//!   swap reasoning, and both answer an UPDATE prompt carrying the
//!   partner's reasoning.
//!
//! Prompts carry exactly one question; context never leaks across
//! questions or rounds.

mod engine;

pub use engine::{
    execute_unit, run_echo, run_mono, run_solo, EngineError, Pairing, PairingPlan, PlannedUnit,
    UnitOutput,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, Question};
use crate::providers::CompletionResponse;

/// Communication mode of a run or record.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mode {
    Solo,
    Mono,
    Echo,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Solo, Mode::Mono, Mode::Echo];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Solo => "SOLO",
            Mode::Mono => "MONO",
            Mode::Echo => "ECHO",
        }
    }

    /// Lowercase token used in request ids and file names.
    pub fn token(&self) -> &'static str {
        match self {
            Mode::Solo => "solo",
            Mode::Mono => "mono",
            Mode::Echo => "echo",
        }
    }

    /// Phase whose answers count toward accuracy in this mode.
    pub fn final_phase(&self) -> Phase {
        match self {
            Mode::Solo => Phase::Initial,
            Mode::Mono | Mode::Echo => Phase::Update,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Mode, String> {
        match s.to_ascii_uppercase().as_str() {
            "SOLO" => Ok(Mode::Solo),
            "MONO" => Ok(Mode::Mono),
            "ECHO" => Ok(Mode::Echo),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

/// First answer vs revision-after-exchange.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "UPPERCASE")]
pub enum Phase {
    Initial,
    Update,
}

impl Phase {
    pub fn token(&self) -> &'static str {
        match self {
            Phase::Initial => "initial",
            Phase::Update => "update",
        }
    }
}

/// An extracted answer. `Invalid` is a value, not an error: unparseable or
/// empty model output stays in the log and counts as incorrect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Answer {
    A,
    B,
    C,
    D,
    #[serde(rename = "INVALID")]
    Invalid,
}

impl Answer {
    pub fn as_label(&self) -> Option<Label> {
        match self {
            Answer::A => Some(Label::A),
            Answer::B => Some(Label::B),
            Answer::C => Some(Label::C),
            Answer::D => Some(Label::D),
            Answer::Invalid => None,
        }
    }

    pub fn matches(&self, gold: Label) -> bool {
        self.as_label() == Some(gold)
    }
}

impl From<Label> for Answer {
    fn from(label: Label) -> Answer {
        match label {
            Label::A => Answer::A,
            Label::B => Answer::B,
            Label::C => Answer::C,
            Label::D => Answer::D,
        }
    }
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.as_label() {
            Some(label) => f.write_str(label.as_str()),
            None => f.write_str("INVALID"),
        }
    }
}

/// A fully rendered prompt, always scoped to a single question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub text: String,
    pub question_id: String,
    pub phase: Phase,
    /// Peer reasoning embedded in UPDATE prompts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attached_reasoning: Option<String>,
}

const ANSWER_INSTRUCTION: &str = "Think through the problem step by step, then give your \
final choice on the last line in the form \"Answer: <letter>\".";

/// Renders the prompt for a question.
///
/// INITIAL prompts contain only the stem, the four labelled options, and the
/// answer-format instruction. UPDATE prompts are the INITIAL prompt with the
/// peer's reasoning appended verbatim and nothing else added.
pub fn build_prompt(question: &Question, phase: Phase, peer_reasoning: Option<&str>) -> Prompt {
    let mut text = String::new();
    text.push_str(&question.stem);
    text.push('\n');
    for label in Label::ALL {
        text.push_str(label.as_str());
        text.push_str(". ");
        text.push_str(&question.options[&label]);
        text.push('\n');
    }
    text.push('\n');
    text.push_str(ANSWER_INSTRUCTION);
    let attached = match phase {
        Phase::Initial => None,
        Phase::Update => {
            let rc = peer_reasoning.expect("UPDATE prompt requires peer reasoning");
            text.push_str("\n\n");
            text.push_str(rc);
            Some(rc.to_string())
        }
    };
    Prompt {
        text,
        question_id: question.id.clone(),
        phase,
        attached_reasoning: attached,
    }
}

fn answer_regex() -> &'static regex::Regex {
    static RE: std::sync::OnceLock<regex::Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| {
        regex::Regex::new(r"(?i)answer\s*[:：]\s*[\(\[\{（【]?\s*([a-dA-D])\b").unwrap()
    })
}

fn standalone_letter_regex() -> &'static regex::Regex {
    static RE: std::sync::OnceLock<regex::Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| regex::Regex::new(r"\b([A-D])\b").unwrap())
}

/// Pulls the answer letter out of raw model output.
///
/// Takes the label from the last `Answer: <letter>` occurrence
/// (case-insensitive, tolerant of a full-width colon and surrounding
/// brackets). Failing that, takes the last standalone capital A–D token on
/// the final non-empty line. Anything else is `Invalid`.
pub fn extract_answer(raw_text: &str) -> Answer {
    if let Some(caps) = answer_regex().captures_iter(raw_text).last() {
        if let Some(label) = Label::parse(&caps[1]) {
            return label.into();
        }
    }
    if let Some(line) = raw_text.lines().rev().find(|l| !l.trim().is_empty()) {
        if let Some(caps) = standalone_letter_regex().captures_iter(line).last() {
            if let Some(label) = Label::parse(&caps[1]) {
                return label.into();
            }
        }
    }
    Answer::Invalid
}

/// One agent's answer event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeRecord {
    /// 1-based repeat round.
    pub run_round: u32,
    pub question_id: String,
    pub mode: Mode,
    pub agent_id: String,
    /// Mentor for MONO learner records; partner for ECHO records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterpart_id: Option<String>,
    pub phase: Phase,
    /// Reasoning content (RC): the complete transcript peers receive.
    pub reasoning: String,
    pub answer: Answer,
    pub correct: bool,
    pub raw: CompletionResponse,
    /// Logical sequence number in canonical log order.
    pub timestamp: u64,
}

impl ExchangeRecord {
    /// Key string grouping the records of one pairing, used for canonical
    /// ordering. Empty for records that belong to no pairing (SOLO, and
    /// MONO mentor answers, which are shared by all learners).
    pub fn pair_key(&self) -> String {
        match (self.mode, self.phase, &self.counterpart_id) {
            (Mode::Mono, Phase::Update, Some(mentor)) => format!("{}>{mentor}", self.agent_id),
            (Mode::Echo, _, Some(partner)) => {
                let (lo, hi) = if self.agent_id <= *partner {
                    (self.agent_id.as_str(), partner.as_str())
                } else {
                    (partner.as_str(), self.agent_id.as_str())
                };
                format!("{lo}+{hi}")
            }
            _ => String::new(),
        }
    }
}

/// Total order over records: (mode, round, question index, pair key,
/// agent, phase). Concurrent completion order never shows in the log.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CanonicalKey {
    pub mode: Mode,
    pub round: u32,
    pub question_index: u32,
    pub pair_key: String,
    pub agent_id: String,
    pub phase: Phase,
}

impl CanonicalKey {
    pub fn of(record: &ExchangeRecord, question_index: u32) -> CanonicalKey {
        CanonicalKey {
            mode: record.mode,
            round: record.run_round,
            question_index,
            pair_key: record.pair_key(),
            agent_id: record.agent_id.clone(),
            phase: record.phase,
        }
    }
}

/// Identity of one provider call; doubles as the deterministic seed input
/// for synthetic agents.
///
/// Rendered as `mode/r<round>/<question_id>/<pair>/<agent>/<phase>` with `-`
/// for the empty pair key. Question ids may contain `/`; agent ids may not.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestKey {
    pub mode: Mode,
    pub round: u32,
    pub question_id: String,
    pub pair_key: String,
    pub agent_id: String,
    pub phase: Phase,
}

impl RequestKey {
    pub fn render(&self) -> String {
        let pair = if self.pair_key.is_empty() { "-" } else { &self.pair_key };
        format!(
            "{}/r{}/{}/{}/{}/{}",
            self.mode.token(),
            self.round,
            self.question_id,
            pair,
            self.agent_id,
            self.phase.token()
        )
    }

    /// The key of this agent's own INITIAL call in the same context.
    pub fn initial_counterpart(&self) -> RequestKey {
        let mut key = self.clone();
        key.phase = Phase::Initial;
        if self.mode == Mode::Mono {
            // A mono learner has no recorded initial; its tentative answer is
            // keyed without the pairing so it is identical across mentors.
            key.pair_key = String::new();
        }
        key
    }
}

impl fmt::Display for RequestKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl FromStr for RequestKey {
    type Err = String;

    /// Parses from both ends so question ids containing `/` survive.
    fn from_str(s: &str) -> Result<RequestKey, String> {
        let parts: Vec<&str> = s.split('/').collect();
        if parts.len() < 6 {
            return Err(format!("malformed request id {s:?}"));
        }
        let mode: Mode = parts[0].parse()?;
        let round = parts[1]
            .strip_prefix('r')
            .and_then(|r| r.parse().ok())
            .ok_or_else(|| format!("malformed round in {s:?}"))?;
        let phase = match parts[parts.len() - 1] {
            "initial" => Phase::Initial,
            "update" => Phase::Update,
            other => return Err(format!("unknown phase {other:?}")),
        };
        let agent_id = parts[parts.len() - 2].to_string();
        let pair = parts[parts.len() - 3];
        let pair_key = if pair == "-" { String::new() } else { pair.to_string() };
        let question_id = parts[2..parts.len() - 3].join("/");
        if question_id.is_empty() {
            return Err(format!("empty question id in {s:?}"));
        }
        Ok(RequestKey { mode, round, question_id, pair_key, agent_id, phase })
    }
}
