//! Black-box tests of the `hodgelab` binary: exit codes, output determinism,
//! and the report-summary table. All runs use the fast spectral-torus
//! fixture; the expensive Bolza pipelines are covered by the core test suite.

use std::path::Path;
use std::process::Command;

use serde_json::{Value, json};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hodgelab"))
}

fn torus_config(dir: &Path, name: &str, seed: u64) -> std::path::PathBuf {
    let report = dir.join(format!("{name}.json"));
    let csv = dir.join(format!("{name}.csv"));
    let cfg = json!({
        "schema_version": 1,
        "seed": seed,
        "surface": { "kind": "torus", "resolution": 16 },
        "vhs": { "n": 2 },
        "experiment": "nhc",
        "parameters": {},
        "output": { "report": report, "csv": csv }
    });
    let path = dir.join(format!("{name}.config.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn torus_kahler_suite_passes_below_1e12() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = torus_config(dir.path(), "t", 11);
    let out = bin().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let rep = read_json(&dir.path().join("t.json"));
    assert_eq!(rep["status"], "pass");
    assert_eq!(rep["experiment"], "nhc");
    let gap = rep["metrics"]["kahler_gap_max"].as_f64().unwrap();
    assert!(gap < 1e-12, "kahler gap {gap:.3e}");
    // CSV table has a header plus one row per trial.
    let csv = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    let trials = rep["metrics"]["trials"].as_f64().unwrap() as usize;
    assert_eq!(csv.lines().count(), 1 + trials);
    assert!(csv.starts_with("trial,u_norm,kahler_gap"));
    // Timestamp sidecar exists and is separate from the report.
    let meta = read_json(&dir.path().join("t.json.meta.json"));
    assert!(meta["started_unix_ms"].as_u64().is_some());
}

#[test]
fn identical_config_and_seed_reproduce_byte_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = torus_config(dir.path(), "d", 42);
    assert_eq!(bin().arg("run").arg(&cfg).output().unwrap().status.code(), Some(0));
    let first = std::fs::read(dir.path().join("d.json")).unwrap();
    let first_csv = std::fs::read(dir.path().join("d.csv")).unwrap();
    std::fs::remove_file(dir.path().join("d.json")).unwrap();
    std::fs::remove_file(dir.path().join("d.csv")).unwrap();
    assert_eq!(bin().arg("run").arg(&cfg).output().unwrap().status.code(), Some(0));
    assert_eq!(first, std::fs::read(dir.path().join("d.json")).unwrap());
    assert_eq!(first_csv, std::fs::read(dir.path().join("d.csv")).unwrap());
}

#[test]
fn different_seeds_differ_in_the_row_table() {
    let dir = tempfile::tempdir().unwrap();
    let c1 = torus_config(dir.path(), "s1", 1);
    let c2 = torus_config(dir.path(), "s2", 2);
    let out = bin().arg("run").arg(&c1).arg(&c2).arg("--jobs").arg("2").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let r1 = read_json(&dir.path().join("s1.json"));
    let r2 = read_json(&dir.path().join("s2.json"));
    assert_ne!(r1["table"]["rows"], r2["table"]["rows"]);
}

#[test]
fn malformed_config_exits_2_without_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.config.json");
    let report = dir.path().join("bad.json");
    // Unknown field, so deserialization itself must reject it.
    std::fs::write(
        &cfg,
        serde_json::to_string(&json!({
            "schema_version": 1,
            "seed": 0,
            "surface": { "kind": "torus", "resolution": 16 },
            "vhs": { "n": 2 },
            "experiment": "nhc",
            "bogus_field": true,
            "output": { "report": report }
        }))
        .unwrap(),
    )
    .unwrap();
    let out = bin().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!report.exists(), "no partial outputs on validation failure");
}

#[test]
fn invalid_values_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for (patch_key, patch_val) in [
        ("schema_version", json!(99)),
        ("experiment", json!("slice")), // slice requires the Bolza surface
    ] {
        let report = dir.path().join("r.json");
        let mut cfg = json!({
            "schema_version": 1,
            "seed": 0,
            "surface": { "kind": "torus", "resolution": 16 },
            "vhs": { "n": 2 },
            "experiment": "nhc",
            "output": { "report": report }
        });
        cfg[patch_key] = patch_val;
        let p = dir.path().join("c.config.json");
        std::fs::write(&p, serde_json::to_string(&cfg).unwrap()).unwrap();
        let out = bin().arg("run").arg(&p).output().unwrap();
        assert_eq!(out.status.code(), Some(2), "{patch_key} should be rejected");
        assert!(!report.exists());
    }
}

fn fake_report(dir: &Path, name: &str, experiment: &str, status: &str, headline: &str) {
    let rep = json!({
        "schema_version": 1,
        "experiment": experiment,
        "status": status,
        "headline": headline,
        "seed": 0,
        "metrics": {},
        "table": { "columns": [], "rows": [] },
        "config": {
            "schema_version": 1,
            "seed": 0,
            "surface": { "kind": "torus", "resolution": 16 },
            "vhs": { "n": 2 },
            "experiment": "nhc",
            "parameters": {},
            "output": { "report": dir.join(name) }
        }
    });
    std::fs::write(dir.join(name), serde_json::to_string_pretty(&rep).unwrap()).unwrap();
}

#[test]
fn summary_sorts_by_experiment_and_reports_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    fake_report(dir.path(), "b.json", "slice", "pass", "recovery_rel=1.0e-9");
    fake_report(dir.path(), "a.json", "nhc", "fail", "residual=2.0e-3");
    let out = bin()
        .arg("report-summary")
        .arg(dir.path().join("b.json"))
        .arg(dir.path().join("a.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "experiment,report,status,headline,detail");
    assert_eq!(lines[1], "nhc,a.json,fail,residual=2.0e-3,");
    assert_eq!(lines[2], "slice,b.json,pass,recovery_rel=1.0e-9,");

    let out = bin()
        .arg("report-summary")
        .arg(dir.path().join("missing.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn summary_writes_to_file_with_out_flag() {
    let dir = tempfile::tempdir().unwrap();
    fake_report(dir.path(), "a.json", "nhc", "pass", "kahler_gap_max=1.0e-13");
    let table = dir.path().join("summary.csv");
    let out = bin()
        .arg("report-summary")
        .arg(dir.path().join("a.json"))
        .arg("--out")
        .arg(&table)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&table).unwrap();
    assert!(text.contains("nhc,a.json,pass,"));
}
