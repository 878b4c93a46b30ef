use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/tiny.toml");

fn edd(run_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edd"))
        .arg("--config")
        .arg(TINY)
        .arg("--run-dir")
        .arg(run_dir)
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_inputs_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = edd(dir.path(), &["evaluate"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn full_run_writes_reports_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let o = edd(dir.path(), &["all"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = dir.path().join("report");
    let json = std::fs::read(report.join("report.json")).unwrap();
    let csv = std::fs::read_to_string(report.join("report.csv")).unwrap();
    let parsed: serde_json::Value = serde_json::from_slice(&json).unwrap();
    assert!(parsed.is_object());
    // header plus one row per seed, model and epsilon at least
    assert!(csv.lines().count() > 2 * 3 * 2, "{csv}");

    let again = edd(dir.path(), &["all"]);
    assert_eq!(again.status.code(), Some(0), "{}", stderr(&again));
    assert!(stderr(&again).contains("up to date"), "{}", stderr(&again));
    assert_eq!(std::fs::read(report.join("report.json")).unwrap(), json);
}

#[test]
fn usage_and_config_errors_exit_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(edd(dir.path(), &["frobnicate"]).status.code(), Some(1));
    let o = edd(dir.path(), &["--members", "0", "prepare"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(!stderr(&o).is_empty());
}
