//! Experiment orchestration: configuration, calibration, resumable main
//! runs, and report generation.
//!
//! A run is a pure function of (config, seed, fixtures): provider calls are
//! dispatched by a bounded worker pool, but every record's content depends
//! only on its request identity, and a single sequencing writer persists
//! records in canonical order. Interrupting a run at any point leaves a
//! canonical prefix on disk; rerunning with `resume` completes exactly the
//! missing records and reproduces the uninterrupted log byte for byte.

mod logfile;
mod report;

pub use logfile::{
    read_log, validate_log, LoadedLog, LogError, LogSummary, LogWriter, Manifest, SCHEMA_VERSION,
};
pub use report::{report, write_radar_csv, write_table1_csv, CellReport, ModeReport, RadarRow};

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{
    bin_by_error_rate, load_question_set, save_question_set, CalibrationTable, CorpusError,
    DifficultyLabel, Question, QuestionFormat, QuestionSet,
};
use crate::metrics::TokenizerScheme;
use crate::modes::{
    execute_unit, CanonicalKey, EngineError, ExchangeRecord, Mode, PairingPlan, PlannedUnit,
};
use crate::providers::{
    CompositeProvider, LiveProvider, ProviderError, ProviderKind, ProviderProfile, RetryPolicy,
    Roster, SamplingParams, ScriptedProvider, SyntheticAgentParams, SyntheticProvider,
};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cannot resume: log was written under config hash {found}, current config hashes to {expected}")]
    ConfigMismatch { expected: String, found: String },
    #[error("fatal provider failure: {0}")]
    FatalProvider(ProviderError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<EngineError> for RunnerError {
    fn from(err: EngineError) -> RunnerError {
        match err {
            EngineError::Provider(p) => RunnerError::FatalProvider(p),
            other => RunnerError::Config(other.to_string()),
        }
    }
}

impl From<ProviderError> for RunnerError {
    fn from(err: ProviderError) -> RunnerError {
        if err.is_retryable() {
            RunnerError::FatalProvider(err)
        } else {
            match err {
                ProviderError::Misconfigured { .. } | ProviderError::MissingCredential(_) => {
                    RunnerError::Config(err.to_string())
                }
                other => RunnerError::FatalProvider(other),
            }
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> RunnerError {
    RunnerError::Io { path: path.display().to_string(), source }
}

// ---------------------------------------------------------------------------
// configuration

#[derive(Debug, Deserialize)]
struct ConfigFile {
    run: RunSection,
    #[serde(default)]
    sampling: Option<SamplingParams>,
    #[serde(default)]
    retry: Option<RetryPolicy>,
    agents: Vec<AgentSection>,
}

#[derive(Debug, Deserialize)]
struct RunSection {
    question_set: PathBuf,
    #[serde(default)]
    format: Option<QuestionFormat>,
    #[serde(default)]
    modes: Option<Vec<Mode>>,
    #[serde(default = "default_rounds")]
    repeat_rounds: u32,
    #[serde(default = "default_calibration_rounds")]
    calibration_rounds: u32,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_concurrency")]
    concurrency: usize,
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
    #[serde(default)]
    tokenizer: Option<TokenizerScheme>,
}

fn default_rounds() -> u32 {
    10
}
fn default_calibration_rounds() -> u32 {
    5
}
fn default_concurrency() -> usize {
    4
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Deserialize)]
struct AgentSection {
    agent_id: String,
    model_name: String,
    tier: crate::providers::Tier,
    kind: ProviderKind,
    #[serde(default)]
    endpoint: Option<String>,
    #[serde(default)]
    credential_ref: Option<String>,
    #[serde(default)]
    sampling: Option<SamplingParams>,
    #[serde(default)]
    fixtures: Option<PathBuf>,
    #[serde(default)]
    synthetic: Option<SyntheticAgentParams>,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub roster: Roster,
    pub question_set_path: PathBuf,
    pub question_format: QuestionFormat,
    /// Selected modes, sorted and deduplicated.
    pub modes: Vec<Mode>,
    pub repeat_rounds: u32,
    pub calibration_rounds: u32,
    pub sampling: SamplingParams,
    pub retry: RetryPolicy,
    pub seed: u64,
    pub concurrency: usize,
    pub output_dir: PathBuf,
    pub tokenizer: TokenizerScheme,
    /// Synthetic parameters per agent, seeds already mixed with the run seed.
    pub synthetic_params: BTreeMap<String, SyntheticAgentParams>,
    /// Fixture file per scripted agent.
    pub fixture_paths: BTreeMap<String, PathBuf>,
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub concurrency: Option<usize>,
}

/// Mixes the run seed into an agent's local seed so `--seed` reseeds every
/// synthetic agent while distinct agents stay decorrelated.
fn mix_seed(run_seed: u64, agent_id: &str, local: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(run_seed.to_le_bytes());
    hasher.update(agent_id.as_bytes());
    hasher.update(local.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Loads and validates a TOML config file.
pub fn load_config(path: &Path, overrides: Overrides) -> Result<RunConfig, RunnerError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let parsed: ConfigFile =
        toml::from_str(&text).map_err(|e| RunnerError::Config(format!("{}: {e}", path.display())))?;

    let seed = overrides.seed.unwrap_or(parsed.run.seed);
    let concurrency = overrides.concurrency.unwrap_or(parsed.run.concurrency).max(1);
    let sampling = parsed.sampling.unwrap_or_default();

    let mut profiles = Vec::new();
    let mut synthetic_params = BTreeMap::new();
    let mut fixture_paths = BTreeMap::new();
    let config_dir = path.parent().unwrap_or(Path::new("."));
    for agent in &parsed.agents {
        profiles.push(ProviderProfile {
            agent_id: agent.agent_id.clone(),
            model_name: agent.model_name.clone(),
            tier: agent.tier,
            kind: agent.kind,
            endpoint: agent.endpoint.clone(),
            sampling: agent.sampling.clone().unwrap_or_else(|| sampling.clone()),
            credential_ref: agent.credential_ref.clone(),
        });
        match agent.kind {
            ProviderKind::Synthetic => {
                let mut params = agent.synthetic.clone().unwrap_or_default();
                params.seed = mix_seed(seed, &agent.agent_id, params.seed);
                synthetic_params.insert(agent.agent_id.clone(), params);
            }
            ProviderKind::Scripted => {
                let fixtures = agent.fixtures.clone().ok_or_else(|| {
                    RunnerError::Config(format!(
                        "scripted agent {:?} needs a fixtures path",
                        agent.agent_id
                    ))
                })?;
                let resolved = if fixtures.is_absolute() {
                    fixtures
                } else {
                    config_dir.join(fixtures)
                };
                fixture_paths.insert(agent.agent_id.clone(), resolved);
            }
            ProviderKind::Live => {}
        }
    }
    let roster = Roster::new(profiles).map_err(|e| RunnerError::Config(e.to_string()))?;

    let mut modes = parsed.run.modes.unwrap_or_else(|| Mode::ALL.to_vec());
    modes.sort();
    modes.dedup();
    if modes.is_empty() {
        return Err(RunnerError::Config("no modes selected".into()));
    }
    let needs_pairs = modes.iter().any(|m| matches!(m, Mode::Mono | Mode::Echo));
    if roster.is_empty() || (needs_pairs && roster.len() < 2) {
        return Err(RunnerError::Config(format!(
            "roster of {} agents cannot run the selected modes",
            roster.len()
        )));
    }
    if parsed.run.repeat_rounds < 1 || parsed.run.calibration_rounds < 1 {
        return Err(RunnerError::Config("round counts must be at least 1".into()));
    }

    let question_set_path = if parsed.run.question_set.is_absolute() {
        parsed.run.question_set.clone()
    } else {
        config_dir.join(&parsed.run.question_set)
    };
    let question_format = parsed
        .run
        .format
        .unwrap_or_else(|| QuestionFormat::from_path(&question_set_path));
    let output_dir = if parsed.run.output_dir.is_absolute() {
        parsed.run.output_dir.clone()
    } else {
        config_dir.join(&parsed.run.output_dir)
    };

    Ok(RunConfig {
        roster,
        question_set_path,
        question_format,
        modes,
        repeat_rounds: parsed.run.repeat_rounds,
        calibration_rounds: parsed.run.calibration_rounds,
        sampling,
        retry: parsed.retry.unwrap_or_default(),
        seed,
        concurrency,
        output_dir,
        tokenizer: parsed.run.tokenizer.unwrap_or_default(),
        synthetic_params,
        fixture_paths,
    })
}

/// Output file locations under the configured directory.
impl RunConfig {
    pub fn run_log_path(&self) -> PathBuf {
        self.output_dir.join("run_log.jsonl")
    }
    pub fn calibration_log_path(&self) -> PathBuf {
        self.output_dir.join("calibration_log.jsonl")
    }
    pub fn calibration_table_path(&self) -> PathBuf {
        self.output_dir.join("calibration_table.jsonl")
    }
    pub fn annotated_questions_path(&self) -> PathBuf {
        self.output_dir.join("annotated_questions.jsonl")
    }
    pub fn table1_csv_path(&self) -> PathBuf {
        self.output_dir.join("table1.csv")
    }
    pub fn radar_csv_path(&self) -> PathBuf {
        self.output_dir.join("radar.csv")
    }
    pub fn run_meta_path(&self) -> PathBuf {
        self.output_dir.join("run_meta.json")
    }
}

// ---------------------------------------------------------------------------
// config fingerprint

#[derive(Serialize)]
struct ProfileFingerprint<'a> {
    agent_id: &'a str,
    model_name: &'a str,
    tier: crate::providers::Tier,
    kind: ProviderKind,
    endpoint: &'a Option<String>,
    credential_ref: &'a Option<String>,
    sampling: &'a SamplingParams,
}

#[derive(Serialize)]
struct Fingerprint<'a> {
    schema_version: u32,
    purpose: &'a str,
    seed: u64,
    rounds: u32,
    modes: &'a [Mode],
    roster: Vec<ProfileFingerprint<'a>>,
    synthetic: &'a BTreeMap<String, SyntheticAgentParams>,
    question_hash: String,
    fixture_hashes: BTreeMap<&'a str, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn question_hash(questions: &[&Question]) -> String {
    let mut hasher = Sha256::new();
    for q in questions {
        hasher.update(serde_json::to_vec(q).expect("question serializes"));
        hasher.update(b"\n");
    }
    sha256_hex(&hasher.finalize())
}

/// Hash of everything that determines a run's content. Concurrency and
/// output paths are deliberately excluded: they may change across resumes
/// without changing the log.
fn config_hash(
    config: &RunConfig,
    purpose: &str,
    rounds: u32,
    modes: &[Mode],
    questions: &[&Question],
) -> Result<String, RunnerError> {
    let mut fixture_hashes = BTreeMap::new();
    for (agent, path) in &config.fixture_paths {
        let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
        fixture_hashes.insert(agent.as_str(), sha256_hex(&bytes));
    }
    let fingerprint = Fingerprint {
        schema_version: SCHEMA_VERSION,
        purpose,
        seed: config.seed,
        rounds,
        modes,
        roster: config
            .roster
            .profiles()
            .iter()
            .map(|p| ProfileFingerprint {
                agent_id: &p.agent_id,
                model_name: &p.model_name,
                tier: p.tier,
                kind: p.kind,
                endpoint: &p.endpoint,
                credential_ref: &p.credential_ref,
                sampling: &p.sampling,
            })
            .collect(),
        synthetic: &config.synthetic_params,
        question_hash: question_hash(questions),
        fixture_hashes,
    };
    Ok(sha256_hex(&serde_json::to_vec(&fingerprint).expect("fingerprint serializes")))
}

// ---------------------------------------------------------------------------
// providers

/// Builds the composite provider for a run; the synthetic backend indexes
/// gold answers and difficulties from the full question set.
pub fn build_provider(
    config: &RunConfig,
    questions: &QuestionSet,
) -> Result<CompositeProvider, RunnerError> {
    let needs_live =
        config.roster.profiles().iter().any(|p| p.kind == ProviderKind::Live);
    let live = if needs_live { Some(LiveProvider::default()) } else { None };

    let scripted = if config.fixture_paths.is_empty() {
        None
    } else {
        let mut merged = ScriptedProvider::new();
        let mut loaded: BTreeMap<&PathBuf, ScriptedProvider> = BTreeMap::new();
        for path in config.fixture_paths.values() {
            if !loaded.contains_key(path) {
                loaded.insert(path, ScriptedProvider::load(path)?);
            }
        }
        // fixture entries carry agent ids, so merging per-path providers is
        // safe even when agents share files
        for provider in loaded.into_values() {
            merged.merge(provider);
        }
        Some(merged)
    };

    let synthetic = if config.synthetic_params.is_empty() {
        None
    } else {
        let index = questions
            .questions
            .iter()
            .map(|q| (q.id.clone(), (q.gold, q.difficulty)))
            .collect();
        Some(SyntheticProvider::new(config.synthetic_params.clone(), index))
    };

    Ok(CompositeProvider { live, scripted, synthetic })
}

// ---------------------------------------------------------------------------
// execution

struct ExecutionSpec<'a> {
    purpose: &'a str,
    modes: &'a [Mode],
    rounds: u32,
    questions: Vec<&'a Question>,
    log_path: PathBuf,
}

/// Sidecar metadata; kept out of the log so logs stay byte-reproducible.
#[derive(Serialize, Deserialize)]
struct RunMeta {
    purpose: String,
    config_hash: String,
    started_at_epoch_ms: u128,
}

fn write_run_meta(config: &RunConfig, purpose: &str, hash: &str) {
    let meta = RunMeta {
        purpose: purpose.to_string(),
        config_hash: hash.to_string(),
        started_at_epoch_ms: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0),
    };
    let path = config.run_meta_path();
    if let Ok(file) = File::create(&path) {
        let _ = serde_json::to_writer_pretty(file, &meta);
    }
}

fn execute_into_log(
    config: &RunConfig,
    provider_index_set: &QuestionSet,
    spec: ExecutionSpec<'_>,
    resume: bool,
) -> Result<Vec<ExchangeRecord>, RunnerError> {
    std::fs::create_dir_all(&config.output_dir)
        .map_err(|e| io_err(&config.output_dir, e))?;
    let hash = config_hash(config, spec.purpose, spec.rounds, spec.modes, &spec.questions)?;
    let manifest = Manifest::new(hash.clone(), config.seed);

    let mut existing: BTreeMap<CanonicalKey, ExchangeRecord> = BTreeMap::new();
    let question_index: BTreeMap<&str, u32> = spec
        .questions
        .iter()
        .enumerate()
        .map(|(i, q)| (q.id.as_str(), i as u32))
        .collect();

    let mut writer = if spec.log_path.exists() {
        if !resume {
            return Err(RunnerError::Config(format!(
                "{} already exists; pass --resume to continue it",
                spec.log_path.display()
            )));
        }
        match read_log(&spec.log_path) {
            Ok(loaded) => {
                if loaded.manifest.config_hash != hash {
                    return Err(RunnerError::ConfigMismatch {
                        expected: hash,
                        found: loaded.manifest.config_hash,
                    });
                }
                let writer = LogWriter::resume(&spec.log_path, &loaded)?;
                for record in loaded.records {
                    let index =
                        question_index.get(record.question_id.as_str()).copied().ok_or_else(
                            || RunnerError::Config(format!(
                                "log record references unknown question {:?}",
                                record.question_id
                            )),
                        )?;
                    existing.insert(CanonicalKey::of(&record, index), record);
                }
                writer
            }
            // nothing usable on disk (e.g. cut inside the manifest line)
            Err(LogError::MissingManifest { .. }) => {
                write_run_meta(config, spec.purpose, &hash);
                LogWriter::create(&spec.log_path, &manifest)?
            }
            Err(err) => return Err(err.into()),
        }
    } else {
        write_run_meta(config, spec.purpose, &hash);
        LogWriter::create(&spec.log_path, &manifest)?
    };

    let provider = build_provider(config, provider_index_set)?;
    let pool = if config.concurrency > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.concurrency)
                .build()
                .map_err(|e| RunnerError::Config(format!("worker pool: {e}")))?,
        )
    } else {
        None
    };

    let mut all_records = Vec::new();
    for &mode in spec.modes {
        let plan = PairingPlan::build(mode, &config.roster)?;
        for round in 1..=spec.rounds {
            for (index, question) in spec.questions.iter().enumerate() {
                let unit = PlannedUnit {
                    mode,
                    round,
                    question,
                    question_index: index as u32,
                };
                let output = execute_unit(
                    &unit,
                    &plan,
                    &config.roster,
                    &provider,
                    &config.retry,
                    pool.as_ref(),
                    &existing,
                )?;
                for (key, mut record) in output {
                    if !existing.contains_key(&key) {
                        writer.append(&mut record)?;
                    }
                    all_records.push(record);
                }
            }
        }
    }
    Ok(all_records)
}

// ---------------------------------------------------------------------------
// public entry points

/// Outcome of the calibration protocol.
#[derive(Debug)]
pub struct CalibrationOutcome {
    pub table: CalibrationTable,
    pub annotated: QuestionSet,
    /// Questions per difficulty bin.
    pub bin_counts: BTreeMap<DifficultyLabel, usize>,
}

/// Runs the calibration protocol: every agent answers the full bank alone
/// for `calibration_rounds` rounds; questions are binned by pooled error
/// rate and the annotated set is persisted.
pub fn calibrate(config: &RunConfig, resume: bool) -> Result<CalibrationOutcome, RunnerError> {
    let set = load_question_set(&config.question_set_path, config.question_format)?;
    if set.is_empty() {
        return Err(RunnerError::Config("question set is empty".into()));
    }
    let questions: Vec<&Question> = set.questions.iter().collect();
    let records = execute_into_log(
        config,
        &set,
        ExecutionSpec {
            purpose: "calibration",
            modes: &[Mode::Solo],
            rounds: config.calibration_rounds,
            questions,
            log_path: config.calibration_log_path(),
        },
        resume,
    )?;

    let mut table = CalibrationTable::new();
    for record in &records {
        table.record(&record.question_id, record.correct);
    }
    table.save(&config.calibration_table_path())?;

    let labels = bin_by_error_rate(&table)?;
    let annotated = set.annotated(&labels);
    save_question_set(&annotated, &config.annotated_questions_path(), QuestionFormat::Jsonl)?;

    let mut bin_counts = BTreeMap::new();
    for label in labels.values() {
        *bin_counts.entry(*label).or_insert(0) += 1;
    }
    Ok(CalibrationOutcome { table, annotated, bin_counts })
}

/// Loads the experiment question set: the calibrated annotation file when
/// present, otherwise the configured set (which must carry difficulties).
pub fn load_annotated_questions(config: &RunConfig) -> Result<QuestionSet, RunnerError> {
    let annotated_path = config.annotated_questions_path();
    let set = if annotated_path.exists() {
        load_question_set(&annotated_path, QuestionFormat::Jsonl)?
    } else {
        load_question_set(&config.question_set_path, config.question_format)?
    };
    if set.questions.iter().all(|q| q.difficulty.is_none()) {
        return Err(RunnerError::Config(
            "no difficulty labels found; run `calibrate` first or provide an annotated JSONL set"
                .into(),
        ));
    }
    Ok(set)
}

/// Runs the selected modes over every non-EXCLUDED question for
/// `repeat_rounds` rounds, appending to the resumable run log.
pub fn run_experiment(
    config: &RunConfig,
    annotated: &QuestionSet,
    resume: bool,
) -> Result<Vec<ExchangeRecord>, RunnerError> {
    let questions = annotated.experiment_questions();
    if questions.is_empty() {
        return Err(RunnerError::Config(
            "annotated set has no non-EXCLUDED questions to run".into(),
        ));
    }
    execute_into_log(
        config,
        annotated,
        ExecutionSpec {
            purpose: "experiment",
            modes: &config.modes,
            rounds: config.repeat_rounds,
            questions,
            log_path: config.run_log_path(),
        },
        resume,
    )
}

/// Recomputes the full report from a stored log; contacts no providers.
pub fn report_from_log(
    config: &RunConfig,
    annotated: &QuestionSet,
    log_path: &Path,
) -> Result<ModeReport, RunnerError> {
    let loaded = read_log(log_path)?;
    Ok(report(
        &loaded.records,
        &config.roster,
        annotated,
        config.repeat_rounds,
        config.tokenizer,
    ))
}
