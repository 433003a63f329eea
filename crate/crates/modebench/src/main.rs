//! Command-line front end: calibrate, run, report, validate-log.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use modebench::corpus::{load_question_set, QuestionFormat};
use modebench::runner::{
    self, load_config, Overrides, RunConfig, RunnerError,
};
use modebench::stats::format_p_value;

#[derive(Parser)]
#[command(name = "modebench", version, about = "Run and evaluate peer-communication modes of LLM agents on single-choice question banks")]
struct Cli {
    /// Path to the TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Continue an interrupted log instead of refusing to overwrite it.
    #[arg(long, global = true)]
    resume: bool,
    /// Override the worker-pool size.
    #[arg(long, global = true)]
    concurrency: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the calibration rounds and bin questions by error rate.
    Calibrate,
    /// Run the selected modes over the calibrated question set.
    Run,
    /// Recompute reports and CSV exports from a stored run log.
    Report {
        /// Log to report on (defaults to <output_dir>/run_log.jsonl).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Check a run log against the record schema and ordering invariants.
    ValidateLog {
        path: PathBuf,
        /// Question set enabling gold-answer and ordering checks.
        #[arg(long)]
        questions: Option<PathBuf>,
    },
}

// 0 success, 2 config error, 3 fatal provider error, 4 resume mismatch
fn exit_code_for(err: &RunnerError) -> u8 {
    match err {
        RunnerError::FatalProvider(_) => 3,
        RunnerError::ConfigMismatch { .. } => 4,
        _ => 2,
    }
}

fn require_config(cli: &Cli) -> Result<RunConfig, RunnerError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| RunnerError::Config("--config is required for this command".into()))?;
    load_config(path, Overrides { seed: cli.seed, concurrency: cli.concurrency })
}

fn run(cli: Cli) -> Result<(), RunnerError> {
    match &cli.command {
        Command::Calibrate => {
            let config = require_config(&cli)?;
            let outcome = runner::calibrate(&config, cli.resume)?;
            println!("calibrated {} questions:", outcome.annotated.len());
            for (label, count) in &outcome.bin_counts {
                println!("  {label}: {count}");
            }
            println!("annotated set: {}", config.annotated_questions_path().display());
            Ok(())
        }
        Command::Run => {
            let config = require_config(&cli)?;
            let annotated = runner::load_annotated_questions(&config)?;
            let records = runner::run_experiment(&config, &annotated, cli.resume)?;
            println!(
                "run complete: {} records in {}",
                records.len(),
                config.run_log_path().display()
            );
            Ok(())
        }
        Command::Report { log } => {
            let config = require_config(&cli)?;
            let annotated = runner::load_annotated_questions(&config)?;
            let log_path = log.clone().unwrap_or_else(|| config.run_log_path());
            let report = runner::report_from_log(&config, &annotated, &log_path)?;
            runner::write_table1_csv(&report, &config.roster, &config.table1_csv_path())?;
            runner::write_radar_csv(&report, &config.radar_csv_path())?;
            for cell in &report.cells {
                let accuracy = cell
                    .accuracy
                    .as_ref()
                    .map(|a| format!("mean {:.3} best {:.3} std {:.3}", a.mean, a.best, a.std))
                    .unwrap_or_else(|| "absent".to_string());
                let p = cell
                    .p_vs_echo
                    .as_ref()
                    .map(|t| format!(" p_vs_echo {}", format_p_value(t.p_two_sided)))
                    .unwrap_or_default();
                println!("{} {} {}: {accuracy}{p}", cell.difficulty, cell.model_name, cell.mode);
            }
            println!("wrote {}", config.table1_csv_path().display());
            println!("wrote {}", config.radar_csv_path().display());
            Ok(())
        }
        Command::ValidateLog { path, questions } => {
            let set = match questions {
                Some(q) => Some(load_question_set(q, QuestionFormat::from_path(q))?),
                None => None,
            };
            let summary = runner::validate_log(path, set.as_ref())?;
            println!(
                "{}: {} records, modes {:?}",
                path.display(),
                summary.records,
                summary.modes
            );
            if summary.is_valid() {
                println!("log is valid");
                Ok(())
            } else {
                for violation in &summary.violations {
                    eprintln!("violation: {violation}");
                }
                Err(RunnerError::Config(format!(
                    "{} violations found",
                    summary.violations.len()
                )))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
