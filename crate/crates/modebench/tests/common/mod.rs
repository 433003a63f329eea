//! Shared fixtures for the integration suites: deterministic question
//! banks, scripted fixture files, a request-recording provider wrapper, and
//! a minimal in-process chat-completions server.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use modebench::corpus::{DifficultyLabel, Label, Question, QuestionSet};
use modebench::modes::Phase;
use modebench::providers::{
    CompletionRequest, CompletionResponse, Provider, ProviderError, ProviderKind,
    ProviderProfile, Roster, SamplingParams, Tier,
};

/// Fixed-width question ids (`q000`…) keep stems and ids substring-safe for
/// isolation checks.
pub fn make_questions(n: usize, difficulty: Option<DifficultyLabel>) -> Vec<Question> {
    let golds = [Label::A, Label::B, Label::C, Label::D];
    (0..n)
        .map(|i| {
            let id = format!("q{i:03}");
            let mut options = BTreeMap::new();
            for label in Label::ALL {
                options.insert(label, format!("OPT-{label}-{id}."));
            }
            Question {
                id: id.clone(),
                stem: format!("STEM-{id} asks which option is listed as correct."),
                options,
                gold: golds[i % 4],
                difficulty,
            }
        })
        .collect()
}

pub fn question_set(n: usize, difficulty: Option<DifficultyLabel>) -> QuestionSet {
    QuestionSet::new("bank", "generated", make_questions(n, difficulty)).unwrap()
}

pub fn scripted_profile(agent_id: &str) -> ProviderProfile {
    ProviderProfile {
        agent_id: agent_id.into(),
        model_name: format!("model-{agent_id}"),
        tier: if agent_id.as_bytes().last().unwrap() % 2 == 0 { Tier::Base } else { Tier::High },
        kind: ProviderKind::Scripted,
        endpoint: None,
        sampling: SamplingParams::default(),
        credential_ref: None,
    }
}

pub fn scripted_roster(m: usize) -> Roster {
    Roster::new((0..m).map(|i| scripted_profile(&format!("a{i}"))).collect()).unwrap()
}

/// Unique, identifiable reasoning text per (agent, question, phase); the
/// marker makes cross-agent leakage greppable.
pub fn fixture_text(agent_id: &str, question_id: &str, phase: Phase, answer: Label) -> String {
    format!(
        "RC-OF-{agent_id}-{question_id}-{}: my reading of {question_id} settles it. \
Confidence: 0.700000.\nAnswer: {answer}",
        phase.token()
    )
}

/// Builds an in-memory scripted provider answering gold on every call.
pub fn gold_scripted(roster: &Roster, questions: &[Question]) -> modebench::providers::ScriptedProvider {
    let mut provider = modebench::providers::ScriptedProvider::new();
    for profile in roster.profiles() {
        for q in questions {
            for phase in [Phase::Initial, Phase::Update] {
                provider.insert(
                    &profile.agent_id,
                    &q.id,
                    phase,
                    &fixture_text(&profile.agent_id, &q.id, phase, q.gold),
                );
            }
        }
    }
    provider
}

/// Writes the same fixtures as [`gold_scripted`] to a JSONL file for
/// runner-level tests.
pub fn write_fixture_file(path: &Path, agent_ids: &[String], questions: &[Question]) {
    let mut out = String::new();
    for agent_id in agent_ids {
        for q in questions {
            for phase in [Phase::Initial, Phase::Update] {
                let entry = serde_json::json!({
                    "agent_id": agent_id,
                    "question_id": q.id,
                    "phase": phase.token(),
                    "text": fixture_text(agent_id, &q.id, phase, q.gold),
                });
                out.push_str(&entry.to_string());
                out.push('\n');
            }
        }
    }
    std::fs::write(path, out).unwrap();
}

pub fn write_annotated_jsonl(path: &Path, questions: &[Question]) {
    let set = QuestionSet::new("bank", "generated", questions.to_vec()).unwrap();
    modebench::corpus::save_question_set(&set, path, modebench::corpus::QuestionFormat::Jsonl)
        .unwrap();
}

/// Wraps a provider and records every request it sees.
pub struct Recording<P> {
    pub inner: P,
    pub requests: Mutex<Vec<CompletionRequest>>,
}

impl<P> Recording<P> {
    pub fn new(inner: P) -> Recording<P> {
        Recording { inner, requests: Mutex::new(Vec::new()) }
    }

    pub fn take(&self) -> Vec<CompletionRequest> {
        std::mem::take(&mut self.requests.lock().unwrap())
    }
}

impl<P: Provider> Provider for Recording<P> {
    fn complete(
        &self,
        profile: &ProviderProfile,
        request: &CompletionRequest,
    ) -> Result<CompletionResponse, ProviderError> {
        self.requests.lock().unwrap().push(request.clone());
        self.inner.complete(profile, request)
    }
}

/// Minimal blocking chat-completions server for protocol-conformance tests.
///
/// Responds to every POST with the next scripted (status, body) pair, or a
/// canned 200 completion when the script runs dry. Records raw request
/// bodies.
pub struct MockServer {
    addr: SocketAddr,
    pub bodies: Arc<Mutex<Vec<String>>>,
    script: Arc<Mutex<Vec<(u16, String)>>>,
    stop: Arc<AtomicBool>,
}

pub fn default_completion_body(text: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": 7, "completion_tokens": 5}
    })
    .to_string()
}

impl MockServer {
    pub fn start() -> MockServer {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let script: Arc<Mutex<Vec<(u16, String)>>> = Arc::new(Mutex::new(Vec::new()));
        let stop = Arc::new(AtomicBool::new(false));
        let server = MockServer {
            addr,
            bodies: bodies.clone(),
            script: script.clone(),
            stop: stop.clone(),
        };
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { break };
                handle_connection(stream, &bodies, &script);
            }
        });
        server
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}/v1/chat/completions", self.addr)
    }

    /// Queues responses served in order before falling back to 200s.
    pub fn enqueue(&self, status: u16, body: &str) {
        self.script.lock().unwrap().push((status, body.to_string()));
    }

    pub fn request_count(&self) -> usize {
        self.bodies.lock().unwrap().len()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr); // unblock accept
    }
}

fn handle_connection(
    mut stream: TcpStream,
    bodies: &Mutex<Vec<String>>,
    script: &Mutex<Vec<(u16, String)>>,
) {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    let header_end = loop {
        match stream.read(&mut chunk) {
            Ok(0) => return,
            Ok(n) => {
                buf.extend_from_slice(&chunk[..n]);
                if let Some(pos) = find_header_end(&buf) {
                    break pos;
                }
            }
            Err(_) => return,
        }
    };
    let headers = String::from_utf8_lossy(&buf[..header_end]).to_string();
    let content_length = headers
        .lines()
        .find_map(|l| {
            let (name, value) = l.split_once(':')?;
            name.eq_ignore_ascii_case("content-length")
                .then(|| value.trim().parse::<usize>().ok())?
        })
        .unwrap_or(0);
    let mut body = buf[header_end + 4..].to_vec();
    while body.len() < content_length {
        match stream.read(&mut chunk) {
            Ok(0) => break,
            Ok(n) => body.extend_from_slice(&chunk[..n]),
            Err(_) => return,
        }
    }
    bodies.lock().unwrap().push(String::from_utf8_lossy(&body).to_string());

    let (status, response_body) = {
        let mut script = script.lock().unwrap();
        if script.is_empty() {
            (200, default_completion_body("Looks clear to me.\nAnswer: A"))
        } else {
            script.remove(0)
        }
    };
    let reason = match status {
        200 => "OK",
        429 => "Too Many Requests",
        _ => "Status",
    };
    let response = format!(
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{response_body}",
        response_body.len()
    );
    let _ = stream.write_all(response.as_bytes());
    let _ = stream.flush();
}

fn find_header_end(buf: &[u8]) -> Option<usize> {
    buf.windows(4).position(|w| w == b"\r\n\r\n")
}

/// Writes a scripted-roster experiment config and its inputs into `dir`.
pub struct ScriptedWorkspace {
    pub config_path: PathBuf,
    pub questions: Vec<Question>,
}

pub fn scripted_workspace(
    dir: &Path,
    m: usize,
    n_questions: usize,
    rounds: u32,
    modes: &str,
    seed: u64,
) -> ScriptedWorkspace {
    let questions = make_questions(n_questions, Some(DifficultyLabel::High));
    let questions_path = dir.join("annotated.jsonl");
    write_annotated_jsonl(&questions_path, &questions);
    let fixtures_path = dir.join("fixtures.jsonl");
    let agent_ids: Vec<String> = (0..m).map(|i| format!("a{i}")).collect();
    write_fixture_file(&fixtures_path, &agent_ids, &questions);

    let mut config = format!(
        r#"
[run]
question_set = "annotated.jsonl"
modes = {modes}
repeat_rounds = {rounds}
seed = {seed}
concurrency = 1
output_dir = "out"
"#
    );
    for (i, agent_id) in agent_ids.iter().enumerate() {
        let tier = if i < m / 2 { "BASE" } else { "HIGH" };
        config.push_str(&format!(
            r#"
[[agents]]
agent_id = "{agent_id}"
model_name = "model-{agent_id}"
tier = "{tier}"
kind = "SCRIPTED"
fixtures = "fixtures.jsonl"
"#
        ));
    }
    let config_path = dir.join("config.toml");
    std::fs::write(&config_path, config).unwrap();
    ScriptedWorkspace { config_path, questions }
}
