//! Question banks, calibration outcomes, and difficulty binning.
//!
//! A question bank is an ordered set of four-option single-choice items.
//! Before the main experiment, every model answers the full bank for a few
//! calibration rounds; the pooled error rate per question then bins it into
//! HIGH / MEDIUM / LOW difficulty (or EXCLUDED, which never enters
//! experiments).

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One of the four answer options.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    A,
    B,
    C,
    D,
}

impl Label {
    pub const ALL: [Label; 4] = [Label::A, Label::B, Label::C, Label::D];

    pub fn as_str(&self) -> &'static str {
        match self {
            Label::A => "A",
            Label::B => "B",
            Label::C => "C",
            Label::D => "D",
        }
    }

    /// Parses `A`..`D` case-insensitively.
    pub fn parse(s: &str) -> Option<Label> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Some(Label::A),
            "B" => Some(Label::B),
            "C" => Some(Label::C),
            "D" => Some(Label::D),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Difficulty assigned from pooled calibration error rate.
///
/// Order is `Excluded < Low < Medium < High`, so binning is monotone in the
/// error rate.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "UPPERCASE")]
pub enum DifficultyLabel {
    Excluded,
    Low,
    Medium,
    High,
}

impl DifficultyLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            DifficultyLabel::Excluded => "EXCLUDED",
            DifficultyLabel::Low => "LOW",
            DifficultyLabel::Medium => "MEDIUM",
            DifficultyLabel::High => "HIGH",
        }
    }
}

impl fmt::Display for DifficultyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A single four-option question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub stem: String,
    /// Option text per label; always exactly four entries.
    pub options: BTreeMap<Label, String>,
    pub gold: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<DifficultyLabel>,
}

impl Question {
    /// Checks the structural invariants: four non-empty options, non-empty stem.
    pub fn validate(&self) -> Result<(), String> {
        if self.stem.trim().is_empty() {
            return Err("empty stem".into());
        }
        for label in Label::ALL {
            match self.options.get(&label) {
                None => return Err(format!("missing option {label}")),
                Some(text) if text.trim().is_empty() => {
                    return Err(format!("empty option {label}"))
                }
                Some(_) => {}
            }
        }
        if self.options.len() != 4 {
            return Err(format!("expected 4 options, found {}", self.options.len()));
        }
        Ok(())
    }
}

/// An ordered, validated collection of questions.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionSet {
    pub name: String,
    pub questions: Vec<Question>,
    /// Provenance, typically the path the set was loaded from.
    pub source: String,
}

impl QuestionSet {
    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Question> {
        self.questions.iter().find(|q| q.id == id)
    }

    /// Builds a set from already-validated questions, checking id uniqueness.
    pub fn new(
        name: impl Into<String>,
        source: impl Into<String>,
        questions: Vec<Question>,
    ) -> Result<QuestionSet, CorpusError> {
        let mut seen = HashSet::new();
        for (row, q) in questions.iter().enumerate() {
            q.validate().map_err(|reason| CorpusError::MalformedRow { row, reason })?;
            if !seen.insert(q.id.clone()) {
                return Err(CorpusError::DuplicateId(q.id.clone()));
            }
        }
        Ok(QuestionSet { name: name.into(), questions, source: source.into() })
    }

    /// Returns a copy with difficulty labels applied from `labels`.
    /// Questions missing from the map keep their current label.
    pub fn annotated(&self, labels: &BTreeMap<String, DifficultyLabel>) -> QuestionSet {
        let mut out = self.clone();
        for q in &mut out.questions {
            if let Some(label) = labels.get(&q.id) {
                q.difficulty = Some(*label);
            }
        }
        out
    }

    /// Questions that participate in experiments: labelled and not EXCLUDED.
    pub fn experiment_questions(&self) -> Vec<&Question> {
        self.questions
            .iter()
            .filter(|q| matches!(q.difficulty, Some(d) if d != DifficultyLabel::Excluded))
            .collect()
    }
}

/// On-disk question formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionFormat {
    Csv,
    Jsonl,
}

impl QuestionFormat {
    /// Infers the format from a file extension; defaults to CSV.
    pub fn from_path(path: &Path) -> QuestionFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("jsonl") || ext.eq_ignore_ascii_case("json") => {
                QuestionFormat::Jsonl
            }
            _ => QuestionFormat::Csv,
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("duplicate question id {0:?}")]
    DuplicateId(String),
    #[error("row {row}: missing option {label}")]
    MissingOption { row: usize, label: String },
    #[error("calibration table incomplete for question {0:?}")]
    IncompleteTable(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io { path: path.display().to_string(), source }
}

/// Loads and validates a question set.
///
/// CSV columns, in order: `id, stem, option_a, option_b, option_c, option_d,
/// gold`. A leading header row using exactly those names is skipped.
/// JSONL carries one object per line:
/// `{"id":…, "stem":…, "options":{"A":…,"B":…,"C":…,"D":…}, "gold":"A"}`
/// with an optional `"difficulty"` field.
pub fn load_question_set(path: &Path, format: QuestionFormat) -> Result<QuestionSet, CorpusError> {
    let questions = match format {
        QuestionFormat::Csv => load_csv(path)?,
        QuestionFormat::Jsonl => load_jsonl(path)?,
    };
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("questions")
        .to_string();
    QuestionSet::new(name, path.display().to_string(), questions)
}

const CSV_HEADER: [&str; 7] = ["id", "stem", "option_a", "option_b", "option_c", "option_d", "gold"];

fn load_csv(path: &Path) -> Result<Vec<Question>, CorpusError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let mut questions = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CorpusError::MalformedRow {
            row,
            reason: e.to_string(),
        })?;
        let fields: Vec<&str> = record.iter().collect();
        if row == 0 && fields.iter().map(|f| f.trim().to_ascii_lowercase()).eq(CSV_HEADER.iter().map(|h| h.to_string())) {
            continue;
        }
        if fields.len() != 7 {
            return Err(CorpusError::MalformedRow {
                row,
                reason: format!("expected 7 columns, found {}", fields.len()),
            });
        }
        let gold = Label::parse(fields[6]).ok_or_else(|| CorpusError::MalformedRow {
            row,
            reason: format!("gold label {:?} not one of A-D", fields[6]),
        })?;
        let mut options = BTreeMap::new();
        for (label, text) in Label::ALL.iter().zip(&fields[2..6]) {
            options.insert(*label, text.to_string());
        }
        questions.push(Question {
            id: fields[0].to_string(),
            stem: fields[1].to_string(),
            options,
            gold,
            difficulty: None,
        });
    }
    Ok(questions)
}

#[derive(Serialize, Deserialize)]
struct QuestionLine {
    id: String,
    stem: String,
    options: BTreeMap<String, String>,
    gold: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    difficulty: Option<DifficultyLabel>,
}

fn load_jsonl(path: &Path) -> Result<Vec<Question>, CorpusError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut questions = Vec::new();
    for (row, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: QuestionLine =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRow {
                row,
                reason: e.to_string(),
            })?;
        let gold = Label::parse(&parsed.gold).ok_or_else(|| CorpusError::MalformedRow {
            row,
            reason: format!("gold label {:?} not one of A-D", parsed.gold),
        })?;
        let mut options = BTreeMap::new();
        for label in Label::ALL {
            let text = parsed.options.get(label.as_str()).ok_or_else(|| {
                CorpusError::MissingOption { row, label: label.as_str().to_string() }
            })?;
            options.insert(label, text.clone());
        }
        questions.push(Question {
            id: parsed.id,
            stem: parsed.stem,
            options,
            gold,
            difficulty: parsed.difficulty,
        });
    }
    Ok(questions)
}

/// Writes a question set back out in the given format.
///
/// JSONL preserves difficulty annotations; the fixed CSV layout cannot carry
/// them.
pub fn save_question_set(
    set: &QuestionSet,
    path: &Path,
    format: QuestionFormat,
) -> Result<(), CorpusError> {
    match format {
        QuestionFormat::Csv => {
            let file = File::create(path).map_err(|e| io_err(path, e))?;
            let mut writer = csv::Writer::from_writer(file);
            writer
                .write_record(CSV_HEADER)
                .map_err(|e| CorpusError::MalformedRow { row: 0, reason: e.to_string() })?;
            for q in &set.questions {
                let row: Vec<&str> = vec![
                    &q.id,
                    &q.stem,
                    &q.options[&Label::A],
                    &q.options[&Label::B],
                    &q.options[&Label::C],
                    &q.options[&Label::D],
                    q.gold.as_str(),
                ];
                writer
                    .write_record(row)
                    .map_err(|e| CorpusError::MalformedRow { row: 0, reason: e.to_string() })?;
            }
            writer.flush().map_err(|e| io_err(path, e))?;
        }
        QuestionFormat::Jsonl => {
            let mut file = File::create(path).map_err(|e| io_err(path, e))?;
            for q in &set.questions {
                let line = QuestionLine {
                    id: q.id.clone(),
                    stem: q.stem.clone(),
                    options: q
                        .options
                        .iter()
                        .map(|(l, t)| (l.as_str().to_string(), t.clone()))
                        .collect(),
                    gold: q.gold.as_str().to_string(),
                    difficulty: q.difficulty,
                };
                serde_json::to_writer(&mut file, &line)
                    .map_err(|e| CorpusError::MalformedRow { row: 0, reason: e.to_string() })?;
                file.write_all(b"\n").map_err(|e| io_err(path, e))?;
            }
        }
    }
    Ok(())
}

/// Per-question correct/incorrect outcomes pooled over all (model, round)
/// calibration trials.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    trials: BTreeMap<String, Vec<bool>>,
}

impl CalibrationTable {
    pub fn new() -> CalibrationTable {
        CalibrationTable::default()
    }

    pub fn record(&mut self, question_id: &str, correct: bool) {
        self.trials.entry(question_id.to_string()).or_default().push(correct);
    }

    pub fn trials(&self, question_id: &str) -> Option<&[bool]> {
        self.trials.get(question_id).map(|v| v.as_slice())
    }

    pub fn question_ids(&self) -> impl Iterator<Item = &str> {
        self.trials.keys().map(|s| s.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    /// Mean error rate for one question: 1 − correct / trials.
    pub fn error_rate(&self, question_id: &str) -> Option<f64> {
        let trials = self.trials.get(question_id)?;
        if trials.is_empty() {
            return None;
        }
        let correct = trials.iter().filter(|&&c| c).count();
        Some(1.0 - correct as f64 / trials.len() as f64)
    }

    /// Persists as JSONL: `{"question_id":…, "trials":[true,false,…]}`.
    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut file = File::create(path).map_err(|e| io_err(path, e))?;
        for (question_id, trials) in &self.trials {
            let line = serde_json::json!({ "question_id": question_id, "trials": trials });
            serde_json::to_writer(&mut file, &line)
                .map_err(|e| CorpusError::MalformedRow { row: 0, reason: e.to_string() })?;
            file.write_all(b"\n").map_err(|e| io_err(path, e))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<CalibrationTable, CorpusError> {
        #[derive(Deserialize)]
        struct Line {
            question_id: String,
            trials: Vec<bool>,
        }
        let file = File::open(path).map_err(|e| io_err(path, e))?;
        let mut table = CalibrationTable::new();
        for (row, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| io_err(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line)
                .map_err(|e| CorpusError::MalformedRow { row, reason: e.to_string() })?;
            table.trials.insert(parsed.question_id, parsed.trials);
        }
        Ok(table)
    }
}

/// Maps a pooled error rate to its difficulty bin.
///
/// The bins partition `[0, 1]`:
/// HIGH = (0.80, 1.0], MEDIUM = [0.50, 0.80], LOW = [0.20, 0.50),
/// EXCLUDED = [0, 0.20).
pub fn label_for_error_rate(e: f64) -> DifficultyLabel {
    if e > 0.80 {
        DifficultyLabel::High
    } else if e >= 0.50 {
        DifficultyLabel::Medium
    } else if e >= 0.20 {
        DifficultyLabel::Low
    } else {
        DifficultyLabel::Excluded
    }
}

/// Bins every question in the table by its pooled error rate.
///
/// Fails with `IncompleteTable` unless all questions carry the same trial
/// count (every question must have been answered by every model in every
/// calibration round).
pub fn bin_by_error_rate(
    table: &CalibrationTable,
) -> Result<BTreeMap<String, DifficultyLabel>, CorpusError> {
    let expected = table
        .trials
        .values()
        .map(|t| t.len())
        .max()
        .unwrap_or(0);
    let mut out = BTreeMap::new();
    for (question_id, trials) in &table.trials {
        if trials.len() != expected || trials.is_empty() {
            return Err(CorpusError::IncompleteTable(question_id.clone()));
        }
        let correct = trials.iter().filter(|&&c| c).count();
        let e = 1.0 - correct as f64 / trials.len() as f64;
        out.insert(question_id.clone(), label_for_error_rate(e));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn question(id: &str, gold: Label) -> Question {
        let mut options = BTreeMap::new();
        for label in Label::ALL {
            options.insert(label, format!("option {label}"));
        }
        Question { id: id.into(), stem: format!("stem for {id}"), options, gold, difficulty: None }
    }

    #[test]
    fn csv_row_maps_fields_directly() {
        let mut tmp = tempfile::NamedTempFile::new().unwrap();
        writeln!(tmp, "q1,\"What is society?\",\"def A\",\"def B\",\"def C\",\"def D\",B").unwrap();
        let set = load_question_set(tmp.path(), QuestionFormat::Csv).unwrap();
        assert_eq!(set.len(), 1);
        let q = &set.questions[0];
        assert_eq!(q.id, "q1");
        assert_eq!(q.stem, "What is society?");
        assert_eq!(q.gold, Label::B);
        assert_eq!(q.options[&Label::C], "def C");
    }

    #[test]
    fn csv_full_bank_preserves_row_order() {
        let mut tmp = tempfile::NamedTempFile::new().unwrap();
        writeln!(tmp, "id,stem,option_a,option_b,option_c,option_d,gold").unwrap();
        for i in 0..264 {
            writeln!(tmp, "q{i},stem {i},a,b,c,d,A").unwrap();
        }
        let set = load_question_set(tmp.path(), QuestionFormat::Csv).unwrap();
        assert_eq!(set.len(), 264);
        assert_eq!(set.questions[263].id, "q263");
    }

    #[test]
    fn csv_row_with_three_options_is_malformed() {
        let mut tmp = tempfile::NamedTempFile::new().unwrap();
        writeln!(tmp, "q1,stem,a,b,c,D").unwrap();
        let err = load_question_set(tmp.path(), QuestionFormat::Csv).unwrap_err();
        assert!(matches!(err, CorpusError::MalformedRow { row: 0, .. }), "{err}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut tmp = tempfile::NamedTempFile::new().unwrap();
        writeln!(tmp, "q1,stem,a,b,c,d,A").unwrap();
        writeln!(tmp, "q1,stem,a,b,c,d,B").unwrap();
        let err = load_question_set(tmp.path(), QuestionFormat::Csv).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId(id) if id == "q1"));
    }

    #[test]
    fn jsonl_missing_option_rejected() {
        let mut tmp = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            tmp,
            r#"{{"id":"q1","stem":"s","options":{{"A":"a","B":"b","C":"c"}},"gold":"A"}}"#
        )
        .unwrap();
        let err = load_question_set(tmp.path(), QuestionFormat::Jsonl).unwrap_err();
        assert!(matches!(err, CorpusError::MissingOption { label, .. } if label == "D"));
    }

    #[test]
    fn binning_matches_boundary_decisions() {
        let cases = [
            (0.85, DifficultyLabel::High),
            (0.80, DifficultyLabel::Medium),
            (0.65, DifficultyLabel::Medium),
            (0.50, DifficultyLabel::Medium),
            (0.30, DifficultyLabel::Low),
            (0.20, DifficultyLabel::Low),
            (0.10, DifficultyLabel::Excluded),
        ];
        for (e, want) in cases {
            assert_eq!(label_for_error_rate(e), want, "e = {e}");
        }
    }

    #[test]
    fn perfect_accuracy_excludes_everything() {
        let mut table = CalibrationTable::new();
        for q in ["q1", "q2", "q3"] {
            for _ in 0..5 {
                table.record(q, true);
            }
        }
        let bins = bin_by_error_rate(&table).unwrap();
        assert!(bins.values().all(|&d| d == DifficultyLabel::Excluded));
    }

    #[test]
    fn uneven_trial_counts_are_incomplete() {
        let mut table = CalibrationTable::new();
        table.record("q1", true);
        table.record("q1", false);
        table.record("q2", true);
        let err = bin_by_error_rate(&table).unwrap_err();
        assert!(matches!(err, CorpusError::IncompleteTable(id) if id == "q2"));
    }

    #[test]
    fn calibration_table_round_trips() {
        let mut table = CalibrationTable::new();
        table.record("q1", true);
        table.record("q1", false);
        table.record("q2", false);
        table.record("q2", false);
        let tmp = tempfile::NamedTempFile::new().unwrap();
        table.save(tmp.path()).unwrap();
        assert_eq!(CalibrationTable::load(tmp.path()).unwrap(), table);
        assert_eq!(table.error_rate("q2"), Some(1.0));
    }

    #[test]
    fn excluded_questions_never_enter_experiments() {
        let mut set = QuestionSet::new(
            "t",
            "t",
            vec![question("q1", Label::A), question("q2", Label::B)],
        )
        .unwrap();
        set.questions[0].difficulty = Some(DifficultyLabel::High);
        set.questions[1].difficulty = Some(DifficultyLabel::Excluded);
        let selected = set.experiment_questions();
        assert_eq!(selected.len(), 1);
        assert_eq!(selected[0].id, "q1");
    }

    proptest! {
        // Every rate maps to exactly one label and the mapping is monotone
        // under EXCLUDED < LOW < MEDIUM < HIGH.
        #[test]
        fn binning_total_and_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(label_for_error_rate(lo) <= label_for_error_rate(hi));
        }

        #[test]
        fn jsonl_round_trip(n in 1usize..20, seed in 0u64..1000) {
            let golds = [Label::A, Label::B, Label::C, Label::D];
            let questions: Vec<Question> = (0..n)
                .map(|i| {
                    let mut q = question(&format!("q{i}"), golds[(seed as usize + i) % 4]);
                    if i % 3 == 0 {
                        q.difficulty = Some(DifficultyLabel::Medium);
                    }
                    q
                })
                .collect();
            let set = QuestionSet::new("t", "t", questions).unwrap();
            let tmp = tempfile::NamedTempFile::new().unwrap();
            save_question_set(&set, tmp.path(), QuestionFormat::Jsonl).unwrap();
            let loaded = load_question_set(tmp.path(), QuestionFormat::Jsonl).unwrap();
            prop_assert_eq!(loaded.questions, set.questions);
        }

        #[test]
        fn csv_round_trip(n in 1usize..20) {
            let questions: Vec<Question> =
                (0..n).map(|i| question(&format!("q{i}"), Label::C)).collect();
            let set = QuestionSet::new("t", "t", questions).unwrap();
            let tmp = tempfile::NamedTempFile::new().unwrap();
            save_question_set(&set, tmp.path(), QuestionFormat::Csv).unwrap();
            let loaded = load_question_set(tmp.path(), QuestionFormat::Csv).unwrap();
            prop_assert_eq!(loaded.questions, set.questions);
        }
    }
}
