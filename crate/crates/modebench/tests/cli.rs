//! End-to-end workflow through the compiled binary: calibrate → run →
//! report → validate-log, plus exit-code conventions.

mod common;

use std::path::Path;
use std::process::{Command, Output};

use modebench::corpus::DifficultyLabel;

fn modebench(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modebench"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn write_synthetic_workflow_config(dir: &Path, n_questions: usize) {
    let questions = common::make_questions(n_questions, None);
    common::write_annotated_jsonl(&dir.join("questions.jsonl"), &questions);
    // six agents of mixed strength so calibration spreads the bins
    let mut config = String::from(
        r#"
[run]
question_set = "questions.jsonl"
modes = ["SOLO", "MONO", "ECHO"]
repeat_rounds = 2
calibration_rounds = 5
seed = 11
concurrency = 2
output_dir = "out"
"#,
    );
    for (i, p) in [0.95, 0.9, 0.6, 0.5, 0.2, 0.1].iter().enumerate() {
        let tier = if i < 3 { "HIGH" } else { "BASE" };
        config.push_str(&format!(
            r#"
[[agents]]
agent_id = "s{i}"
model_name = "synthetic-{i}"
tier = "{tier}"
kind = "SYNTHETIC"

[agents.synthetic]
p_correct_default = {p}
confidence_correct_mean = 0.8
confidence_wrong_mean = 0.2
confidence_noise = 0.05
"#
        ));
    }
    std::fs::write(dir.join("config.toml"), config).unwrap();
}

#[test]
fn full_workflow_calibrate_run_report_validate() {
    let dir = tempfile::tempdir().unwrap();
    write_synthetic_workflow_config(dir.path(), 24);

    let calibrate = modebench(&["--config", "config.toml", "calibrate"], dir.path());
    assert!(
        calibrate.status.success(),
        "calibrate failed: {}",
        String::from_utf8_lossy(&calibrate.stderr)
    );
    let stdout = String::from_utf8_lossy(&calibrate.stdout);
    assert!(stdout.contains("calibrated 24 questions"), "{stdout}");
    // 6 agents x 5 rounds x 24 questions
    let calibration_log = dir.path().join("out/calibration_log.jsonl");
    let lines = std::fs::read_to_string(&calibration_log).unwrap().lines().count();
    assert_eq!(lines, 1 + 6 * 5 * 24, "manifest plus one record per trial");

    // the annotated set drives the run; EXCLUDED questions never enter it
    let annotated = modebench::corpus::load_question_set(
        &dir.path().join("out/annotated_questions.jsonl"),
        modebench::corpus::QuestionFormat::Jsonl,
    )
    .unwrap();
    assert_eq!(annotated.len(), 24);
    assert!(annotated.questions.iter().all(|q| q.difficulty.is_some()));
    let runnable = annotated.experiment_questions().len();

    let run = modebench(&["--config", "config.toml", "run"], dir.path());
    assert!(run.status.success(), "run failed: {}", String::from_utf8_lossy(&run.stderr));
    if runnable > 0 {
        let per_unit = 6 + (6 + 30) + (15 * 4); // solo + mono + echo records per (round, question)
        let expected = 2 * runnable * per_unit;
        let stdout = String::from_utf8_lossy(&run.stdout);
        assert!(
            stdout.contains(&format!("run complete: {expected} records")),
            "{stdout} (runnable = {runnable})"
        );
    }

    let report = modebench(&["--config", "config.toml", "report"], dir.path());
    assert!(report.status.success(), "report failed: {}", String::from_utf8_lossy(&report.stderr));
    let table1 = std::fs::read_to_string(dir.path().join("out/table1.csv")).unwrap();
    let header = table1.lines().next().unwrap();
    assert!(header.starts_with("Dataset,Metric,"));
    for model in 0..6 {
        for mode in ["Solo", "Mono", "Echo"] {
            assert!(header.contains(&format!("synthetic-{model} {mode}")), "{header}");
        }
    }
    let radar = std::fs::read_to_string(dir.path().join("out/radar.csv")).unwrap();
    assert_eq!(radar.lines().next().unwrap(), "model,mode,metric,raw,z,u,difficulty");
    assert!(radar.lines().count() > 1, "radar rows present");

    let validate = modebench(
        &[
            "validate-log",
            "out/run_log.jsonl",
            "--questions",
            "out/annotated_questions.jsonl",
        ],
        dir.path(),
    );
    assert!(
        validate.status.success(),
        "validate-log failed: {}",
        String::from_utf8_lossy(&validate.stderr)
    );
    assert!(String::from_utf8_lossy(&validate.stdout).contains("log is valid"));
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();

    // 2: config error (missing --config)
    let out = modebench(&["run"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    // 2: config error (unreadable config)
    let out = modebench(&["--config", "missing.toml", "run"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    // build a tiny runnable workspace
    let questions = common::make_questions(2, Some(DifficultyLabel::Low));
    common::write_annotated_jsonl(&dir.path().join("questions.jsonl"), &questions);
    std::fs::write(
        dir.path().join("config.toml"),
        r#"
[run]
question_set = "questions.jsonl"
modes = ["SOLO"]
repeat_rounds = 2
seed = 3
output_dir = "out"

[[agents]]
agent_id = "s1"
model_name = "synthetic"
tier = "BASE"
kind = "SYNTHETIC"

[agents.synthetic]
p_correct_default = 1.0
"#,
    )
    .unwrap();
    let out = modebench(&["--config", "config.toml", "run"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    // 2: refusing to overwrite an existing log without --resume
    let out = modebench(&["--config", "config.toml", "run"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--resume"));

    // 4: resume under a different effective config
    let out = modebench(&["--config", "config.toml", "--resume", "--seed", "999", "run"], dir.path());
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));

    // 0: idempotent resume under the same config
    let out = modebench(&["--config", "config.toml", "--resume", "run"], dir.path());
    assert_eq!(out.status.code(), Some(0));

    // 2: validation failure on a tampered log
    let log_path = dir.path().join("out/run_log.jsonl");
    let log = std::fs::read_to_string(&log_path).unwrap();
    let tampered = log.replace("\"correct\":true", "\"correct\":false");
    std::fs::write(&log_path, tampered).unwrap();
    let out = modebench(
        &["validate-log", "out/run_log.jsonl", "--questions", "questions.jsonl"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("violation"));
}

#[test]
fn fatal_provider_failures_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let questions = common::make_questions(1, Some(DifficultyLabel::Low));
    common::write_annotated_jsonl(&dir.path().join("questions.jsonl"), &questions);
    // scripted agent whose fixture file lacks the needed entries
    std::fs::write(dir.path().join("fixtures.jsonl"), "").unwrap();
    std::fs::write(
        dir.path().join("config.toml"),
        r#"
[run]
question_set = "questions.jsonl"
modes = ["SOLO"]
repeat_rounds = 1
seed = 3
output_dir = "out"

[[agents]]
agent_id = "r1"
model_name = "replay"
tier = "BASE"
kind = "SCRIPTED"
fixtures = "fixtures.jsonl"
"#,
    )
    .unwrap();
    let out = modebench(&["--config", "config.toml", "run"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no fixture"));
}
