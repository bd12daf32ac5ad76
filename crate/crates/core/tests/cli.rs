use std::path::PathBuf;
use std::process::Command;

use nullctl::harness::ExperimentConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nullctl"))
}

fn default_config() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json")
}

#[test]
fn shipped_default_matches_builtin_defaults() {
    let cfg = ExperimentConfig::load(&default_config()).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
}

#[test]
fn config_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    let mut cfg = ExperimentConfig {
        n: 11,
        ..ExperimentConfig::default()
    };
    cfg.weights.c_eps = 0.55;
    cfg.hum.epsilon = Some(1e-3);
    std::fs::write(&path, cfg.to_json().unwrap()).unwrap();
    let back = ExperimentConfig::load(&path).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.to_json().unwrap(), cfg.to_json().unwrap());
}

#[test]
fn missing_config_exits_with_two() {
    let out = bin()
        .args(["hum", "--config", "/nonexistent/cfg.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_config_lists_each_violation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"n": 1, "weights": {"lambda": 0.5, "mu": 0.9}}"#).unwrap();
    let out = bin()
        .arg("identities")
        .arg("--config")
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(
        err.lines()
            .filter(|l| l.starts_with("config error"))
            .count(),
        3,
        "{err}"
    );
}

#[test]
fn identities_pass_on_default_config() {
    let out = bin()
        .arg("identities")
        .arg("--config")
        .arg(default_config())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("5 passed, 0 failed"), "{text}");
}

#[test]
fn hum_report_has_closure_and_cost() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hum.json");
    let out = bin()
        .arg("hum")
        .arg("--config")
        .arg(default_config())
        .arg("--out")
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert!(report["closure_error"].as_f64().unwrap() < 1e-10);
    assert!(report["cost_ratio"].as_f64().unwrap().is_finite());
}

#[test]
fn sweep_csv_has_header_and_one_row_per_spacing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    let mut cfg = ExperimentConfig::default();
    cfg.sweep.cells = vec![8, 12, 16];
    cfg.depth = 5;
    std::fs::write(&cfg_path, cfg.to_json().unwrap()).unwrap();
    let csv_path = dir.path().join("sweep.csv");
    let out = bin()
        .arg("sweep")
        .arg("--config")
        .arg(&cfg_path)
        .arg("--out")
        .arg(&csv_path)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&csv_path).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(!text.contains('\r'));
    assert_eq!(text.lines().next().unwrap(), nullctl::harness::CSV_HEADER);
}

#[test]
fn unwritable_output_exits_with_three() {
    let out = bin()
        .args(["sweep", "--out", "/nonexistent/dir/sweep.csv"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}
