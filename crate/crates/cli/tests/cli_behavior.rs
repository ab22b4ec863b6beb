//! Black-box tests of the `sqbench` binary: exit codes, the JSON error
//! contract on stderr, resume semantics, and flag overrides. Each test gets
//! its own temporary config whose data paths point at the checked-in
//! fixture tree but whose cassette and run directories stay in a sandbox.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_sqbench")
}

/// Writes a config into `dir` that reads fixture data from the repository
/// but records cassettes and runs inside `dir`.
fn sandbox_config(dir: &Path) -> PathBuf {
    let root = repo_root();
    let mut config: Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("fixtures/config.json")).unwrap())
            .unwrap();
    let paths = config["paths"].as_object_mut().unwrap();
    for (key, relative) in [
        ("personas", "fixtures/personas.json"),
        ("golden_questions", "fixtures/golden_questions.json"),
        ("difficulties", "fixtures/difficulties.json"),
        ("stopwords", "data/stopwords.txt"),
        ("token_pairs", "fixtures/token_pairs.jsonl"),
        ("rubrics_dir", "data/rubrics"),
    ] {
        paths[key] = Value::String(root.join(relative).to_string_lossy().into_owned());
    }
    paths["cassette_dir"] = Value::String(dir.join("cassettes").to_string_lossy().into_owned());
    paths["runs_dir"] = Value::String(dir.join("runs").to_string_lossy().into_owned());
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(binary()).args(args).output().expect("binary runs")
}

fn stderr_error(output: &Output) -> Value {
    let text = String::from_utf8_lossy(&output.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| {
        panic!("stderr is not the JSON error document ({e}): {text}");
    })
}

#[test]
fn missing_config_is_a_config_error() {
    let output = run(&["--config", "/nonexistent/config.json", "generate"]);
    assert_eq!(output.status.code(), Some(2));
    let error = stderr_error(&output);
    assert_eq!(error["error"]["kind"], "config");
    assert!(error["error"]["message"].as_str().unwrap().contains("config"));
}

#[test]
fn conflicting_mode_flags_are_rejected() {
    let output = run(&["--replay", "--live", "run-all"]);
    assert_eq!(output.status.code(), Some(2));
    // Argument errors come from the parser, before the JSON contract applies.
    assert!(String::from_utf8_lossy(&output.stderr).contains("cannot be used with"));
}

#[test]
fn stage_with_missing_prerequisite_fails_with_stage_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = sandbox_config(dir.path());
    let output = run(&[
        "--config",
        config.to_str().unwrap(),
        "--record",
        "--run-id",
        "r-gate-first",
        "gate",
    ]);
    assert_eq!(output.status.code(), Some(1));
    let error = stderr_error(&output);
    assert_eq!(error["error"]["stage"], "gate");
    assert!(error["error"]["message"].as_str().unwrap().contains("candidates"));
}

#[test]
fn record_run_then_resume_skips_completed_stages() {
    let dir = tempfile::tempdir().unwrap();
    let config = sandbox_config(dir.path());
    let config = config.to_str().unwrap();

    let output = run(&["--config", config, "--record", "--run-id", "r-full", "run-all"]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&output.stderr));

    let reports = dir.path().join("runs/r-full/reports");
    for file in ["summary.csv", "chi_square.csv", "histograms.csv", "token_ratio.csv", "report.md"]
    {
        assert!(reports.join(file).exists(), "missing report {file}");
    }

    let output =
        run(&["--config", config, "--record", "--run-id", "r-full", "--resume", "generate"]);
    assert_eq!(output.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&output.stdout).contains("already complete"));
}

#[test]
fn reusing_a_run_id_with_changed_config_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = sandbox_config(dir.path());
    let config = config_path.to_str().unwrap();

    let output = run(&["--config", config, "--record", "--run-id", "r-pin", "generate"]);
    assert_eq!(output.status.code(), Some(0));

    let mut parsed: Value =
        serde_json::from_str(&std::fs::read_to_string(&config_path).unwrap()).unwrap();
    parsed["master_seed"] = Value::from(43);
    std::fs::write(&config_path, serde_json::to_string_pretty(&parsed).unwrap()).unwrap();

    let output = run(&["--config", config, "--record", "--run-id", "r-pin", "gate"]);
    assert_eq!(output.status.code(), Some(2));
    let error = stderr_error(&output);
    assert_eq!(error["error"]["kind"], "config_changed");
}

#[test]
fn tau_and_alpha_overrides_are_snapshotted() {
    let dir = tempfile::tempdir().unwrap();
    let config = sandbox_config(dir.path());
    let output = run(&[
        "--config",
        config.to_str().unwrap(),
        "--record",
        "--run-id",
        "r-overrides",
        "--tau",
        "0.7",
        "--alpha",
        "0.01",
        "generate",
    ]);
    assert_eq!(output.status.code(), Some(0));

    let manifest: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("runs/r-overrides/manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["config"]["judge"]["tau"], 0.7);
    assert_eq!(manifest["config"]["stats"]["alpha"], 0.01);
}
