//! Tokenization, lexical-diversity metrics, accuracy aggregation, and radar
//! normalization.
//!
//! Three diversity metrics are computed from a token frequency histogram:
//!
//! - inverse Simpson `N(N−1) / Σ φ(φ−1)` — penalizes dominance of
//!   high-frequency tokens;
//! - Honoré's statistic `100·ln N / (1 − V₁/V)` — rewards hapax legomena
//!   (types occurring exactly once);
//! - token entropy `−Σ p log₂ p` in bits — evenness of the distribution.
//!
//! Degenerate inputs (all-hapax texts, too-short texts) produce explicit
//! sentinels rather than silently coerced numbers, so downstream radar
//! aggregation can exclude them.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_segmentation::UnicodeSegmentation;

use crate::modes::{ExchangeRecord, Mode};
use crate::stats::{self, StatsError};

/// How reasoning text is split into tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerScheme {
    /// Standard Unicode word-boundary segmentation; every CJK ideograph is
    /// its own token. Case-folded. The default.
    UnicodeWord,
    /// Every CJK ideograph is a token; the rest is whitespace-split.
    /// Case-folded.
    CjkChar,
}

impl Default for TokenizerScheme {
    fn default() -> TokenizerScheme {
        TokenizerScheme::UnicodeWord
    }
}

fn is_cjk_ideograph(c: char) -> bool {
    matches!(c,
        '\u{4E00}'..='\u{9FFF}'      // CJK Unified Ideographs
        | '\u{3400}'..='\u{4DBF}'    // Extension A
        | '\u{F900}'..='\u{FAFF}'    // Compatibility Ideographs
        | '\u{20000}'..='\u{3134F}'  // Extensions B..G
    )
}

/// Splits a token into per-ideograph pieces, keeping non-CJK runs intact.
fn split_cjk(token: &str, out: &mut Vec<String>) {
    let mut run = String::new();
    for c in token.chars() {
        if is_cjk_ideograph(c) {
            if !run.is_empty() {
                out.push(std::mem::take(&mut run));
            }
            out.push(c.to_string());
        } else {
            run.push(c);
        }
    }
    if !run.is_empty() {
        out.push(run);
    }
}

/// Deterministic, case-folded tokenization. Empty text gives an empty list.
pub fn tokenize(text: &str, scheme: TokenizerScheme) -> Vec<String> {
    let mut out = Vec::new();
    match scheme {
        TokenizerScheme::UnicodeWord => {
            for word in text.unicode_words() {
                split_cjk(&word.to_lowercase(), &mut out);
            }
        }
        TokenizerScheme::CjkChar => {
            for piece in text.split_whitespace() {
                split_cjk(&piece.to_lowercase(), &mut out);
            }
        }
    }
    out
}

/// Token frequency table: total count N, type count V, hapax count V₁, and
/// per-type frequencies φ.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TokenHistogram {
    freqs: HashMap<String, u64>,
    total: u64,
}

impl TokenHistogram {
    pub fn from_tokens<I, S>(tokens: I) -> TokenHistogram
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut freqs: HashMap<String, u64> = HashMap::new();
        let mut total = 0;
        for token in tokens {
            *freqs.entry(token.as_ref().to_string()).or_insert(0) += 1;
            total += 1;
        }
        TokenHistogram { freqs, total }
    }

    pub fn from_text(text: &str, scheme: TokenizerScheme) -> TokenHistogram {
        TokenHistogram::from_tokens(tokenize(text, scheme))
    }

    /// Total token count N.
    pub fn total(&self) -> u64 {
        self.total
    }

    /// Unique type count V.
    pub fn types(&self) -> u64 {
        self.freqs.len() as u64
    }

    /// Hapax legomena count V₁ (types occurring exactly once).
    pub fn hapaxes(&self) -> u64 {
        self.freqs.values().filter(|&&f| f == 1).count() as u64
    }

    pub fn frequencies(&self) -> impl Iterator<Item = u64> + '_ {
        self.freqs.values().copied()
    }

    pub fn frequency(&self, token: &str) -> u64 {
        self.freqs.get(token).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum DiversityError {
    /// Every type occurs exactly once; the statistic's denominator is zero.
    #[error("degenerate input: every token type is a hapax")]
    DegenerateAllHapax,
    /// Fewer than two tokens.
    #[error("text too short for this metric")]
    TooShort,
}

/// A metric value or its explicit degenerate sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricValue {
    Value(f64),
    Sentinel(DiversityError),
}

impl MetricValue {
    pub fn ok(&self) -> Option<f64> {
        match self {
            MetricValue::Value(v) => Some(*v),
            MetricValue::Sentinel(_) => None,
        }
    }
}

impl From<Result<f64, DiversityError>> for MetricValue {
    fn from(r: Result<f64, DiversityError>) -> MetricValue {
        match r {
            Ok(v) => MetricValue::Value(v),
            Err(e) => MetricValue::Sentinel(e),
        }
    }
}

/// Inverse Simpson index `N(N−1) / Σ φ(φ−1)`.
pub fn inverse_simpson(h: &TokenHistogram) -> Result<f64, DiversityError> {
    let n = h.total();
    if n < 2 {
        return Err(DiversityError::TooShort);
    }
    let denom: u64 = h.frequencies().map(|f| f * (f - 1)).sum();
    if denom == 0 {
        return Err(DiversityError::DegenerateAllHapax);
    }
    Ok((n * (n - 1)) as f64 / denom as f64)
}

/// Honoré's statistic `100 · ln N / (1 − V₁/V)`, natural log.
pub fn honore(h: &TokenHistogram) -> Result<f64, DiversityError> {
    let n = h.total();
    if n < 2 {
        return Err(DiversityError::TooShort);
    }
    let v = h.types();
    let v1 = h.hapaxes();
    if v1 == v {
        return Err(DiversityError::DegenerateAllHapax);
    }
    Ok(100.0 * (n as f64).ln() / (1.0 - v1 as f64 / v as f64))
}

/// Token entropy `−Σ p log_b p` with `p = φ/N`; `0·log 0 ≡ 0`.
pub fn entropy_with_base(h: &TokenHistogram, base: f64) -> f64 {
    let n = h.total();
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let sum: f64 = h
        .frequencies()
        .map(|f| {
            let p = f as f64 / nf;
            p * p.ln()
        })
        .sum();
    -sum / base.ln()
}

/// Token entropy in bits (base 2).
pub fn entropy(h: &TokenHistogram) -> f64 {
    entropy_with_base(h, 2.0)
}

/// The three diversity metrics of one text, sentinels included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityScores {
    pub inverse_simpson: MetricValue,
    pub honore: MetricValue,
    pub entropy_bits: f64,
}

impl DiversityScores {
    pub fn of(h: &TokenHistogram) -> DiversityScores {
        DiversityScores {
            inverse_simpson: inverse_simpson(h).into(),
            honore: honore(h).into(),
            entropy_bits: entropy(h),
        }
    }

    pub fn of_text(text: &str, scheme: TokenizerScheme) -> DiversityScores {
        DiversityScores::of(&TokenHistogram::from_text(text, scheme))
    }
}

/// Per-round accuracies of one (model, mode, difficulty) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub per_round: Vec<f64>,
    pub mean: f64,
    pub best: f64,
    /// Sample (n−1) standard deviation.
    pub std: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no final-phase records for round {0}")]
    MissingRound(u32),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Per-round accuracy over the final answers of one cell's records.
///
/// "Final" means the INITIAL phase in SOLO and the UPDATE phase in MONO and
/// ECHO — mentor answers and pre-exchange answers never count. Invalid
/// answers stay in the denominator as incorrect.
pub fn accuracy_summary(
    records: &[&ExchangeRecord],
    rounds: u32,
) -> Result<AccuracySummary, MetricsError> {
    let mut per_round = Vec::with_capacity(rounds as usize);
    for round in 1..=rounds {
        let mut total = 0u64;
        let mut correct = 0u64;
        for record in records {
            if record.run_round == round && record.phase == record.mode.final_phase() {
                total += 1;
                if record.correct {
                    correct += 1;
                }
            }
        }
        if total == 0 {
            return Err(MetricsError::MissingRound(round));
        }
        per_round.push(correct as f64 / total as f64);
    }
    let (mean, best, std) = stats::descriptive(&per_round)?;
    Ok(AccuracySummary { per_round, mean, best, std })
}

/// One normalized radar coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarPoint {
    pub model_name: String,
    pub mode: Mode,
    pub metric: String,
    pub raw: f64,
    /// z-score within the (mode, metric) group across models.
    pub z: f64,
    /// Φ(z), in [0, 1].
    pub u: f64,
}

/// Standardizes raw per-model metric values within one (mode, metric) group
/// and maps them through the standard normal CDF into [0, 1].
///
/// Uses the sample (n−1) standard deviation. A zero-variance group maps
/// every model to u = 0.5.
pub fn normalize_radar(
    mode: Mode,
    metric: &str,
    values: &BTreeMap<String, f64>,
) -> Vec<RadarPoint> {
    let n = values.len();
    let raws: Vec<f64> = values.values().copied().collect();
    let mean = if n == 0 { 0.0 } else { raws.iter().sum::<f64>() / n as f64 };
    let std = if n < 2 {
        0.0
    } else {
        (raws.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
    };
    values
        .iter()
        .map(|(model, &raw)| {
            let z = if std > 0.0 { (raw - mean) / std } else { 0.0 };
            RadarPoint {
                model_name: model.clone(),
                mode,
                metric: metric.to_string(),
                raw,
                z,
                u: stats::standard_normal_cdf(z),
            }
        })
        .collect()
}
