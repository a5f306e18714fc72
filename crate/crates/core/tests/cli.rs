//! Exit codes and output formats of the `kcmtree` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn kcmtree(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kcmtree"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(kcmtree(&["bogus"], dir.path()).status.code(), Some(1));
    assert_eq!(kcmtree(&["exact-gap"], dir.path()).status.code(), Some(1));
    assert_eq!(kcmtree(&["recursion", "--p", "2"], dir.path()).status.code(), Some(1));
    assert_eq!(kcmtree(&["--help"], dir.path()).status.code(), Some(0));
    fs::write(dir.path().join("bad.json"), r#"{"kay": 2}"#).unwrap();
    let out = kcmtree(&["scaling-critical", "--config", "bad.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn recursion_writes_certified_series() {
    let dir = tempfile::tempdir().unwrap();
    let out = kcmtree(
        &["recursion", "--p", "1/2", "--n-max", "50", "--out", "rec"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("rec/recursion.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("n,p_n,harmonic_bound,geometric_bound"));
    assert_eq!(lines.next(), Some("0,0.5,,"));
    assert_eq!(csv.lines().count(), 52);
    let summary = json(&dir.path().join("rec/recursion.json"));
    assert!(summary["harmonic_bound"]["first_failure"].is_null());
    assert!(summary["geometric_bound"]["first_failure"].is_null());
    // above 1/k neither bound applies
    let out = kcmtree(&["recursion", "--p", "0.6", "--n-max", "5", "--out", "hi"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(json(&dir.path().join("hi/recursion.json"))["harmonic_bound"].is_null());
}

#[test]
fn exact_commands_report_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = kcmtree(&["exact-gap", "-L", "0", "--p", "0.5"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((report["gap"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    let out = kcmtree(&["exact-mix", "-L", "1", "--p", "0.5", "--starts", "all"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["t1"].as_f64().unwrap() <= report["t2"].as_f64().unwrap());
    let out = kcmtree(&["mix-bound", "--gaps", "0.5,0.5", "--n", "2"], dir.path());
    let bound: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((bound["t_star"].as_f64().unwrap() + 4f64.ln()).abs() < 1e-12);
}

#[test]
fn verdict_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    for (regime, code) in [("power-law", 0), ("exponential", 2)] {
        let cfg = format!(r#"{{"depths": [1, 2, 3], "min_fit_depth": 1, "cross_check": false, "expect": "{regime}"}}"#);
        fs::write(dir.path().join("cfg.json"), cfg).unwrap();
        let out = kcmtree(
            &["scaling-critical", "--config", "cfg.json", "--out", regime],
            dir.path(),
        );
        assert_eq!(
            out.status.code(),
            Some(code),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        let report = json(&dir.path().join(regime).join("scaling-critical.json"));
        assert_eq!(report["verdict"]["passed"].as_bool(), Some(code == 0));
        let csv = fs::read_to_string(dir.path().join(regime).join("scaling-critical.csv")).unwrap();
        assert!(csv.starts_with("depth,p,method,t_rel,stderr"));
    }
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = kcmtree::analysis::ExperimentConfig::load(&path).unwrap();
        cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        seen += 1;
    }
    assert!(seen >= 4);
}
