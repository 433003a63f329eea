//! Aggregation of a run log into accuracy/significance tables and radar
//! exports.
//!
//! Reports are a pure function of the log: per (model, mode, difficulty)
//! cell they carry the accuracy summary over rounds, the signed-rank
//! p-value of that mode against the Echo reference, and diversity scores
//! over the concatenated final-phase reasoning. Radar rows standardize each
//! (mode, metric) group across models per difficulty scope and pooled
//! (`ALL`).

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::corpus::{DifficultyLabel, QuestionSet};
use crate::metrics::{
    accuracy_summary, normalize_radar, AccuracySummary, DiversityScores, MetricValue, RadarPoint,
    TokenHistogram, TokenizerScheme,
};
use crate::modes::{ExchangeRecord, Mode};
use crate::stats::{format_p_value, wilcoxon_signed_rank, PairedSample, TestResult};

use super::RunnerError;

/// One (model, mode, difficulty) cell of the report.
#[derive(Debug, Clone, Serialize)]
pub struct CellReport {
    pub model_name: String,
    pub mode: Mode,
    pub difficulty: DifficultyLabel,
    /// Absent when the cell is missing rounds (logged as a warning).
    pub accuracy: Option<AccuracySummary>,
    /// Signed-rank test of this mode's per-round accuracy against the Echo
    /// reference; absent for Echo cells and when either side is missing.
    pub p_vs_echo: Option<TestResult>,
    pub diversity: DiversityScores,
}

/// One radar CSV row: a normalized point plus the difficulty scope it was
/// standardized within (`HIGH`/`MEDIUM`/`LOW` or pooled `ALL`).
#[derive(Debug, Clone, Serialize)]
pub struct RadarRow {
    pub difficulty: String,
    #[serde(flatten)]
    pub point: RadarPoint,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeReport {
    pub cells: Vec<CellReport>,
    pub radar: Vec<RadarRow>,
}

impl ModeReport {
    pub fn cell(&self, model: &str, mode: Mode, difficulty: DifficultyLabel) -> Option<&CellReport> {
        self.cells.iter().find(|c| {
            c.model_name == model && c.mode == mode && c.difficulty == difficulty
        })
    }
}

const METRICS: [&str; 3] = ["inverse_simpson", "honore", "entropy"];

fn metric_value(scores: &DiversityScores, metric: &str) -> MetricValue {
    match metric {
        "inverse_simpson" => scores.inverse_simpson,
        "honore" => scores.honore,
        "entropy" => MetricValue::Value(scores.entropy_bits),
        other => unreachable!("unknown metric {other}"),
    }
}

/// Difficulty bins in the order reports list them.
const BINS: [DifficultyLabel; 3] =
    [DifficultyLabel::High, DifficultyLabel::Medium, DifficultyLabel::Low];

/// Builds the full report from log records.
///
/// Records on questions without a difficulty label are ignored. Cells that
/// are missing rounds are marked absent rather than failing the whole
/// report.
pub fn report(
    records: &[ExchangeRecord],
    roster: &crate::providers::Roster,
    questions: &QuestionSet,
    rounds: u32,
    tokenizer: TokenizerScheme,
) -> ModeReport {
    let difficulty_of: BTreeMap<&str, DifficultyLabel> = questions
        .questions
        .iter()
        .filter_map(|q| q.difficulty.map(|d| (q.id.as_str(), d)))
        .collect();
    let model_of: BTreeMap<&str, &str> = roster
        .profiles()
        .iter()
        .map(|p| (p.agent_id.as_str(), p.model_name.as_str()))
        .collect();
    // distinct model names in roster order
    let mut models: Vec<&str> = Vec::new();
    for p in roster.profiles() {
        if !models.contains(&p.model_name.as_str()) {
            models.push(&p.model_name);
        }
    }
    let mut modes: Vec<Mode> = records.iter().map(|r| r.mode).collect();
    modes.sort();
    modes.dedup();

    // group records per cell, preserving log order for deterministic
    // reasoning concatenation
    let mut cells: BTreeMap<(&str, Mode, DifficultyLabel), Vec<&ExchangeRecord>> = BTreeMap::new();
    for record in records {
        let Some(&model) = model_of.get(record.agent_id.as_str()) else { continue };
        let Some(&difficulty) = difficulty_of.get(record.question_id.as_str()) else { continue };
        cells.entry((model, record.mode, difficulty)).or_default().push(record);
    }

    let mut accuracy_by_cell: BTreeMap<(&str, Mode, DifficultyLabel), AccuracySummary> =
        BTreeMap::new();
    for (key, cell_records) in &cells {
        match accuracy_summary(cell_records, rounds) {
            Ok(summary) => {
                accuracy_by_cell.insert(*key, summary);
            }
            Err(err) => {
                log::warn!(
                    "cell ({}, {}, {}) incomplete: {err}; marked absent",
                    key.0, key.1, key.2
                );
            }
        }
    }

    let mut out_cells = Vec::new();
    for &difficulty in &BINS {
        for &model in &models {
            for &mode in &modes {
                let key = (model, mode, difficulty);
                let Some(cell_records) = cells.get(&key) else { continue };
                let accuracy = accuracy_by_cell.get(&key).cloned();
                let p_vs_echo = match (mode, &accuracy) {
                    (Mode::Echo, _) | (_, None) => None,
                    (_, Some(summary)) => accuracy_by_cell
                        .get(&(model, Mode::Echo, difficulty))
                        .and_then(|echo| {
                            let sample = PairedSample::new(
                                summary.per_round.clone(),
                                echo.per_round.clone(),
                            )
                            .ok()?;
                            match wilcoxon_signed_rank(&sample) {
                                Ok(result) => Some(result),
                                Err(err) => {
                                    log::warn!(
                                        "no p-value for ({model}, {mode}, {difficulty}): {err}"
                                    );
                                    None
                                }
                            }
                        }),
                };
                let text = concat_final_reasoning(cell_records);
                let diversity = DiversityScores::of_text(&text, tokenizer);
                out_cells.push(CellReport {
                    model_name: model.to_string(),
                    mode,
                    difficulty,
                    accuracy,
                    p_vs_echo,
                    diversity,
                });
            }
        }
    }

    // radar: per difficulty scope and pooled, standardize each (mode,
    // metric) group across models; degenerate metric values are excluded
    let mut radar = Vec::new();
    let mut scopes: Vec<(String, BTreeMap<(String, Mode), DiversityScores>)> = Vec::new();
    for &difficulty in &BINS {
        let mut scope = BTreeMap::new();
        for cell in &out_cells {
            if cell.difficulty == difficulty {
                scope.insert((cell.model_name.clone(), cell.mode), cell.diversity);
            }
        }
        if !scope.is_empty() {
            scopes.push((difficulty.to_string(), scope));
        }
    }
    let mut pooled = BTreeMap::new();
    for &mode in &modes {
        for &model in &models {
            let text: Vec<&str> = records
                .iter()
                .filter(|r| {
                    r.mode == mode
                        && r.phase == mode.final_phase()
                        && model_of.get(r.agent_id.as_str()) == Some(&model)
                        && difficulty_of.contains_key(r.question_id.as_str())
                })
                .map(|r| r.reasoning.as_str())
                .collect();
            if !text.is_empty() {
                let h = TokenHistogram::from_text(&text.join("\n"), tokenizer);
                pooled.insert((model.to_string(), mode), DiversityScores::of(&h));
            }
        }
    }
    if !pooled.is_empty() {
        scopes.push(("ALL".to_string(), pooled));
    }

    for (scope_name, scope) in &scopes {
        for &mode in &modes {
            for metric in METRICS {
                let mut values = BTreeMap::new();
                for ((model, cell_mode), scores) in scope {
                    if *cell_mode != mode {
                        continue;
                    }
                    match metric_value(scores, metric).ok() {
                        Some(v) => {
                            values.insert(model.clone(), v);
                        }
                        None => log::warn!(
                            "excluding degenerate {metric} for ({model}, {mode}, {scope_name}) from radar"
                        ),
                    }
                }
                if values.len() < 2 {
                    continue;
                }
                for point in normalize_radar(mode, metric, &values) {
                    radar.push(RadarRow { difficulty: scope_name.clone(), point });
                }
            }
        }
    }

    ModeReport { cells: out_cells, radar }
}

fn concat_final_reasoning(records: &[&ExchangeRecord]) -> String {
    let parts: Vec<&str> = records
        .iter()
        .filter(|r| r.phase == r.mode.final_phase())
        .map(|r| r.reasoning.as_str())
        .collect();
    parts.join("\n")
}

fn fmt3(v: f64) -> String {
    format!("{v:.3}")
}

/// Writes the accuracy table: one row per (difficulty, statistic), one
/// column per (model, mode).
pub fn write_table1_csv(
    report: &ModeReport,
    roster: &crate::providers::Roster,
    path: &Path,
) -> Result<(), RunnerError> {
    let mut models: Vec<&str> = Vec::new();
    for p in roster.profiles() {
        if !models.contains(&p.model_name.as_str()) {
            models.push(&p.model_name);
        }
    }
    let mut writer = csv::Writer::from_path(path).map_err(|e| RunnerError::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e),
    })?;
    let mut header = vec!["Dataset".to_string(), "Metric".to_string()];
    for model in &models {
        for mode in Mode::ALL {
            header.push(format!("{model} {}", title(mode)));
        }
    }
    let io = |e: csv::Error| RunnerError::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e),
    };
    writer.write_record(&header).map_err(io)?;

    for difficulty in BINS {
        if !report.cells.iter().any(|c| c.difficulty == difficulty) {
            continue;
        }
        for statistic in ["Mean", "Best", "Std", "P_value"] {
            let mut row = vec![difficulty.to_string(), statistic.to_string()];
            for model in &models {
                for mode in Mode::ALL {
                    let cell = report.cell(model, mode, difficulty);
                    let text = match (cell, statistic) {
                        (None, _) => String::new(),
                        (Some(c), "Mean") => {
                            c.accuracy.as_ref().map(|a| fmt3(a.mean)).unwrap_or_default()
                        }
                        (Some(c), "Best") => {
                            c.accuracy.as_ref().map(|a| fmt3(a.best)).unwrap_or_default()
                        }
                        (Some(c), "Std") => {
                            c.accuracy.as_ref().map(|a| fmt3(a.std)).unwrap_or_default()
                        }
                        (Some(_), "P_value") if mode == Mode::Echo => "/".to_string(),
                        (Some(c), "P_value") => c
                            .p_vs_echo
                            .as_ref()
                            .map(|t| format_p_value(t.p_two_sided))
                            .unwrap_or_default(),
                        _ => unreachable!(),
                    };
                    row.push(text);
                }
            }
            writer.write_record(&row).map_err(io)?;
        }
    }
    writer.flush().map_err(|e| RunnerError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(())
}

fn title(mode: Mode) -> &'static str {
    match mode {
        Mode::Solo => "Solo",
        Mode::Mono => "Mono",
        Mode::Echo => "Echo",
    }
}

/// Writes radar rows as CSV: model, mode, metric, raw, z, u, difficulty.
pub fn write_radar_csv(report: &ModeReport, path: &Path) -> Result<(), RunnerError> {
    let io_csv = |e: csv::Error| RunnerError::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e),
    };
    let mut writer = csv::Writer::from_path(path).map_err(io_csv)?;
    writer
        .write_record(["model", "mode", "metric", "raw", "z", "u", "difficulty"])
        .map_err(io_csv)?;
    for row in &report.radar {
        writer
            .write_record([
                row.point.model_name.as_str(),
                row.point.mode.as_str(),
                row.point.metric.as_str(),
                &row.point.raw.to_string(),
                &row.point.z.to_string(),
                &row.point.u.to_string(),
                row.difficulty.as_str(),
            ])
            .map_err(io_csv)?;
    }
    writer.flush().map_err(|e| RunnerError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(())
}
