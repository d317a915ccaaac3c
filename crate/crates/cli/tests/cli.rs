//! Smoke tests for the command-line interface: artifact shapes, exit codes,
//! and determinism of the `simulate` output.

use std::path::Path;
use std::process::{Command, Output};

fn ctate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctate"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn simulate(dir: &Path, name: &str, seed: &str, schedule: &str) -> std::path::PathBuf {
    let out = dir.join(name);
    let run = ctate(&[
        "simulate",
        "--scenario",
        "sim0",
        "--subjects",
        "3",
        "--seed",
        seed,
        "--schedule",
        schedule,
        "--out",
        out.to_str().expect("utf8 path"),
    ]);
    assert!(run.status.success(), "simulate failed: {run:?}");
    out
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().expect("tempdir");
    let first = simulate(dir.path(), "a.csv", "9", "t2");
    let second = simulate(dir.path(), "b.csv", "9", "t2");
    let bytes_a = std::fs::read(&first).expect("read first");
    let bytes_b = std::fs::read(&second).expect("read second");
    assert_eq!(bytes_a, bytes_b, "same seed must give identical files");
    assert!(bytes_a.starts_with(b"subject,time,channel,value\n"));

    let other = simulate(dir.path(), "c.csv", "10", "t2");
    let bytes_c = std::fs::read(&other).expect("read third");
    assert_ne!(bytes_a, bytes_c, "different seeds must differ");
}

#[test]
fn test_command_emits_a_json_report() {
    let dir = tempfile::tempdir().expect("tempdir");
    let data = simulate(dir.path(), "cohort.csv", "9", "t2");
    let report = dir.path().join("report.json");
    let run = ctate(&[
        "test",
        "--data",
        data.to_str().unwrap(),
        "--basis",
        "poly",
        "--max-degree",
        "1",
        "--out",
        report.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "test failed: {run:?}");
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).expect("report written"))
            .expect("valid json");
    assert_eq!(parsed["method"], "proposed");
    for field in ["tau_hat", "sigma_hat", "z", "p_one_sided", "p_two_sided"] {
        assert!(
            parsed["result"][field].is_number(),
            "missing field {field} in {parsed}"
        );
    }
    assert!(parsed["config"]["gamma"].is_number());
    assert!(parsed["version"].is_string());
}

#[test]
fn computational_failures_exit_nonzero_with_a_diagnostic() {
    let dir = tempfile::tempdir().expect("tempdir");
    // Everything treated: no control block can be assembled.
    let data = simulate(dir.path(), "on.csv", "9", "on");
    let run = ctate(&["test", "--data", data.to_str().unwrap()]);
    assert!(!run.status.success(), "expected failure: {run:?}");
    let stderr = String::from_utf8_lossy(&run.stderr);
    assert!(
        stderr.contains("error"),
        "stderr should carry a diagnostic, got {stderr:?}"
    );
}

#[test]
fn usage_errors_exit_nonzero() {
    let missing = ctate(&["test", "--data", "/does/not/exist.csv"]);
    assert!(!missing.status.success());

    let bad_grid = ctate(&["sweep", "--over", "volume=11"]);
    assert!(!bad_grid.status.success());

    let conflicting = ctate(&["power", "--paper-table", "1", "--config", "x.json"]);
    assert!(!conflicting.status.success());
}

#[test]
fn power_writes_csv_rows_and_artifacts() {
    let dir = tempfile::tempdir().expect("tempdir");
    let run = ctate(&[
        "power",
        "--scenario",
        "sim0",
        "--subjects",
        "3",
        "--reps",
        "4",
        "--seed",
        "5",
        "--method",
        "t",
        "--method",
        "proposed",
        "--basis",
        "poly",
        "--max-degree",
        "1",
    ]);
    assert!(run.status.success(), "power failed: {run:?}");
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(stdout.starts_with("study,delta,n_s,n_y,method,p_hat,se,failures"));
    assert_eq!(stdout.trim_end().lines().count(), 3, "header plus two methods");

    let stem = dir.path().join("run");
    let with_artifacts = ctate(&[
        "sweep",
        "--scenario",
        "sim0",
        "--subjects",
        "3",
        "--reps",
        "4",
        "--seed",
        "5",
        "--basis",
        "poly",
        "--max-degree",
        "1",
        "--over",
        "delta=0.0,0.3",
        "--out",
        stem.to_str().unwrap(),
    ]);
    assert!(with_artifacts.status.success(), "sweep failed: {with_artifacts:?}");
    for name in ["run.csv", "run.replications.csv", "run.manifest.json"] {
        assert!(dir.path().join(name).exists(), "missing artifact {name}");
    }
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("run.manifest.json")).expect("manifest"),
    )
    .expect("valid manifest json");
    assert_eq!(manifest["master_seed"], 5);
    assert_eq!(manifest["studies"].as_array().expect("studies").len(), 2);
}
