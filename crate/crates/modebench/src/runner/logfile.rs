//! Append-only JSONL run logs.
//!
//! Line 1 is a manifest (schema version, config hash, code version, seed);
//! every following line is one `ExchangeRecord`. Records are written
//! strictly in canonical order and flushed one by one, so an interrupted
//! log is always a canonical-order prefix (plus at most one partial line,
//! which readers discard). Serialization is deterministic, which is what
//! makes "same config + seed + fixtures ⇒ byte-identical log" hold.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::QuestionSet;
use crate::modes::{Answer, CanonicalKey, ExchangeRecord, Mode, Phase};

pub const SCHEMA_VERSION: u32 = 1;

/// First line of every run log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
}

impl Manifest {
    pub fn new(config_hash: String, seed: u64) -> Manifest {
        Manifest {
            schema_version: SCHEMA_VERSION,
            config_hash,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
        }
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("log {path} line {line}: {reason}")]
    Corrupt { path: String, line: usize, reason: String },
    #[error("log {path} has no manifest line")]
    MissingManifest { path: String },
    #[error("log schema version {found} is not supported (expected {SCHEMA_VERSION})")]
    SchemaVersion { found: u32 },
}

fn io_err(path: &Path, source: std::io::Error) -> LogError {
    LogError::Io { path: path.display().to_string(), source }
}

/// A parsed log: the manifest, the valid records, and how many leading
/// bytes of the file they span (a partial trailing line is excluded).
#[derive(Debug)]
pub struct LoadedLog {
    pub manifest: Manifest,
    pub records: Vec<ExchangeRecord>,
    pub valid_len: u64,
    pub truncated_tail: bool,
}

/// Reads a log, tolerating a partial final line (an interrupted write).
/// Any malformed line other than the last is corruption.
pub fn read_log(path: &Path) -> Result<LoadedLog, LogError> {
    let mut file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| io_err(path, e))?;

    let mut records = Vec::new();
    let mut manifest: Option<Manifest> = None;
    let mut valid_len = 0u64;
    let mut truncated_tail = false;
    let mut line_no = 0usize;
    let mut offset = 0usize;

    while offset < bytes.len() {
        let end = match bytes[offset..].iter().position(|&b| b == b'\n') {
            Some(rel) => offset + rel,
            None => {
                truncated_tail = true;
                break;
            }
        };
        let line = &bytes[offset..end];
        let parse = |reason: String| LogError::Corrupt {
            path: path.display().to_string(),
            line: line_no + 1,
            reason,
        };
        if line_no == 0 {
            let m: Manifest = serde_json::from_slice(line).map_err(|e| parse(e.to_string()))?;
            if m.schema_version != SCHEMA_VERSION {
                return Err(LogError::SchemaVersion { found: m.schema_version });
            }
            manifest = Some(m);
        } else {
            match serde_json::from_slice::<ExchangeRecord>(line) {
                Ok(record) => records.push(record),
                Err(e) => {
                    // a malformed *final* line is an interrupted write;
                    // anything earlier is real corruption
                    if bytes[end + 1..].iter().all(|&b| b == b'\n' || b == b' ') {
                        truncated_tail = true;
                        break;
                    }
                    return Err(parse(e.to_string()));
                }
            }
        }
        valid_len = (end + 1) as u64;
        offset = end + 1;
        line_no += 1;
    }

    let manifest = manifest.ok_or_else(|| LogError::MissingManifest {
        path: path.display().to_string(),
    })?;
    if valid_len < bytes.len() as u64 {
        truncated_tail = true;
    }
    Ok(LoadedLog { manifest, records, valid_len, truncated_tail })
}

/// Sequencing writer: stamps each record with its logical sequence number
/// and flushes it before the next one is accepted.
pub struct LogWriter {
    writer: BufWriter<File>,
    path: std::path::PathBuf,
    next_seq: u64,
}

impl LogWriter {
    /// Starts a fresh log, writing the manifest line.
    pub fn create(path: &Path, manifest: &Manifest) -> Result<LogWriter, LogError> {
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        let mut writer = BufWriter::new(file);
        serde_json::to_writer(&mut writer, manifest)
            .map_err(|e| io_err(path, std::io::Error::other(e)))?;
        writer.write_all(b"\n").map_err(|e| io_err(path, e))?;
        writer.flush().map_err(|e| io_err(path, e))?;
        Ok(LogWriter { writer, path: path.to_path_buf(), next_seq: 0 })
    }

    /// Continues an interrupted log: truncates any partial trailing line
    /// and appends after the existing records.
    pub fn resume(path: &Path, loaded: &LoadedLog) -> Result<LogWriter, LogError> {
        let file = OpenOptions::new().write(true).open(path).map_err(|e| io_err(path, e))?;
        file.set_len(loaded.valid_len).map_err(|e| io_err(path, e))?;
        let mut file = file;
        file.seek(SeekFrom::End(0)).map_err(|e| io_err(path, e))?;
        Ok(LogWriter {
            writer: BufWriter::new(file),
            path: path.to_path_buf(),
            next_seq: loaded.records.len() as u64,
        })
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Stamps, serializes, writes, and flushes one record.
    pub fn append(&mut self, record: &mut ExchangeRecord) -> Result<(), LogError> {
        record.timestamp = self.next_seq;
        serde_json::to_writer(&mut self.writer, record)
            .map_err(|e| io_err(&self.path, std::io::Error::other(e)))?;
        self.writer.write_all(b"\n").map_err(|e| io_err(&self.path, e))?;
        self.writer.flush().map_err(|e| io_err(&self.path, e))?;
        self.next_seq += 1;
        Ok(())
    }
}

/// Outcome of a validation pass over a log file.
#[derive(Debug, Default, PartialEq)]
pub struct LogSummary {
    pub records: usize,
    pub modes: BTreeSet<Mode>,
    pub truncated_tail: bool,
    pub violations: Vec<String>,
}

impl LogSummary {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Validates every record against the schema invariants; with a question
/// set it additionally checks answer correctness and strict canonical
/// ordering.
pub fn validate_log(path: &Path, questions: Option<&QuestionSet>) -> Result<LogSummary, LogError> {
    let loaded = read_log(path)?;
    let mut summary = LogSummary {
        records: loaded.records.len(),
        truncated_tail: loaded.truncated_tail,
        ..LogSummary::default()
    };
    if loaded.truncated_tail {
        summary
            .violations
            .push("file ends in a partial line (interrupted write; resumable)".to_string());
    }
    let index_of = |id: &str| -> Option<u32> {
        questions.and_then(|set| {
            set.questions.iter().position(|q| q.id == id).map(|i| i as u32)
        })
    };
    let mut last_key: Option<CanonicalKey> = None;
    for (i, record) in loaded.records.iter().enumerate() {
        summary.modes.insert(record.mode);
        let mut violation = |reason: String| {
            summary.violations.push(format!("record {i}: {reason}"));
        };
        if record.run_round < 1 {
            violation("run_round below 1".into());
        }
        if record.timestamp != i as u64 {
            violation(format!("timestamp {} is not the sequence number {i}", record.timestamp));
        }
        if record.answer == Answer::Invalid && record.correct {
            violation("invalid answer marked correct".into());
        }
        match (record.mode, record.phase, &record.counterpart_id) {
            (Mode::Solo, _, Some(_)) => violation("SOLO record with a counterpart".into()),
            (Mode::Solo, Phase::Update, _) => violation("SOLO record in UPDATE phase".into()),
            (Mode::Mono, Phase::Update, None) => {
                violation("MONO learner record without a mentor".into())
            }
            (Mode::Mono, Phase::Initial, Some(_)) => {
                violation("MONO mentor record with a counterpart".into())
            }
            (Mode::Echo, _, None) => violation("ECHO record without a partner".into()),
            _ => {}
        }
        if let Some(set) = questions {
            match set.get(&record.question_id) {
                None => violation(format!("unknown question {:?}", record.question_id)),
                Some(q) => {
                    if record.correct != record.answer.matches(q.gold) {
                        violation("correct flag inconsistent with gold answer".into());
                    }
                }
            }
            if let Some(index) = index_of(&record.question_id) {
                let key = CanonicalKey::of(record, index);
                if let Some(prev) = &last_key {
                    if *prev >= key {
                        violation("canonical order violated".into());
                    }
                }
                last_key = Some(key);
            }
        }
    }
    Ok(summary)
}
