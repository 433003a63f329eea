//! Simulator and evaluation harness for peer-communication modes of LLM
//! agents on single-choice question banks.
//!
//! The library runs a roster of agents (live chat-completion endpoints,
//! scripted replays, or seeded synthetic agents) over a question set under
//! three communication modes:
//!
//! - **Solo** — each agent answers in full isolation (baseline capability).
//! - **Mono** — a mentor's reasoning is appended to a learner's prompt and
//!   only the learner revises.
//! - **Echo** — two agents swap reasoning and both revise.
//!
//! On top of the raw answer log it computes per-round accuracy summaries,
//! exact Wilcoxon signed-rank significance tests, three lexical-diversity
//! metrics (inverse Simpson, Honoré's statistic, token entropy), and
//! z-score / normal-CDF radar normalization for cross-model comparison.
//!
//! Module map:
//!
//! - [`corpus`] — question banks, calibration, difficulty binning
//! - [`providers`] — agent backends (live / scripted / synthetic) and retry
//! - [`modes`] — prompt construction, answer extraction, the three engines
//! - [`metrics`] — tokenization, diversity metrics, accuracy, radar
//! - [`stats`] — exact signed-rank test and descriptive statistics
//! - [`runner`] — configuration, resumable logging, reports, orchestration

pub mod corpus;
pub mod metrics;
pub mod modes;
pub mod providers;
pub mod runner;
pub mod stats;
