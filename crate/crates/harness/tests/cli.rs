use std::path::Path;
use std::process::{Command, Output};

fn pbg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pbg")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_analyze_report_round() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.toml");
    std::fs::write(&config, "[crystal]\naff = 0.60\nlayers = \"1..=2\"\npol = \"TM\"\n[sweep]\nf_step = 200e6\n").unwrap();
    let sim = dir.path().join("sim");
    let out = pbg(&["simulate", "--config", path(&config), "--out", path(&sim), "--jobs", "2", "--orientation", "GammaM"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("2 runs, 3 solver invocations"));

    let again = pbg(&["simulate", "--config", path(&config), "--out", path(&sim)]);
    assert!(String::from_utf8_lossy(&again.stdout).contains("0 solver invocations"));

    let analysis = dir.path().join("analysis");
    let out = pbg(&["analyze", "--in", path(&sim), "--out", path(&analysis), "--threshold-db", "10", "--zero-tol", "0.05"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("aff0.60-N02-TM: no gap"));
    assert!(analysis.join("analysis.json").is_file());

    let report = dir.path().join("report");
    let out = pbg(&["report", "--in", path(&analysis), "--out", path(&report)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(report.join("group_index/aff0.60-TM.csv").is_file());
}

#[test]
fn calibrate_reports_fit() {
    let dir = tempfile::tempdir().unwrap();
    let out = pbg(&["calibrate", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
    assert!(dir.path().join("calibration.json").is_file());
}

#[test]
fn errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[crystal]\naff = 1.5\nlayers = [1]\n").unwrap();
    let out = pbg(&["simulate", "--config", path(&bad), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let out = pbg(&["analyze", "--in", path(&dir.path().join("missing")), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));

    let out = pbg(&["simulate", "--config", path(&bad), "--out", path(dir.path()), "--resolution", "0.01"]);
    assert_eq!(out.status.code(), Some(2));
}
