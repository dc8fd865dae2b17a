use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn config(dir: &Path, extra: Value) -> std::path::PathBuf {
    let mut doc = json!({
        "algebra": {"family": "compact_u", "n": 2, "k": 1},
        "grid": {"N": 32, "L": 25.132741228718345},
        "params": {"alpha": 1.0, "beta": 0.1, "gamma": -0.0125},
        "initial": {"kind": "random_smooth", "modes": 2, "amplitude": 0.2},
        "T": 0.02,
        "output_times": [0.01, 0.02],
        "out_dir": dir.join("out"),
        "seed": 3
    });
    for (k, v) in extra.as_object().unwrap() {
        doc[k] = v.clone();
    }
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
    path
}

fn symflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_symflow")).args(args).output().unwrap()
}

fn contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn simulate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), json!({}));
    let cfg = cfg.to_str().unwrap();
    assert!(symflow(&["simulate", "--config", cfg]).status.success());
    let first = contents(&tmp.path().join("out"));
    assert!(symflow(&["simulate", "--config", cfg]).status.success());
    let second = contents(&tmp.path().join("out"));
    assert_eq!(first.keys().collect::<Vec<_>>(), ["manifest.json", "observables.csv", "snapshot_0000.json", "snapshot_0001.json", "snapshot_0002.json"]);
    assert_eq!(first, second);
    let csv = String::from_utf8(first["observables.csv"].clone()).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("t,E,E21,E22,E23,E2,Etilde,H,spectrum_dev,m_residual"));
}

#[test]
fn seed_flag_changes_random_data() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), json!({"T": 0.0, "output_times": []}));
    let cfg = cfg.to_str().unwrap();
    let out = tmp.path().join("out");
    assert!(symflow(&["simulate", "--config", cfg]).status.success());
    let a = std::fs::read(out.join("snapshot_0000.json")).unwrap();
    assert!(symflow(&["simulate", "--config", cfg, "--seed", "4"]).status.success());
    let b = std::fs::read(out.join("snapshot_0000.json")).unwrap();
    assert_ne!(a, b);
    let manifest: Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["initial"]["seed"], 4);
}

#[test]
fn zero_final_time_writes_one_snapshot() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), json!({"T": 0.0, "output_times": []}));
    let out = symflow(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success());
    let files = contents(&tmp.path().join("out"));
    assert_eq!(files.keys().filter(|k| k.starts_with("snapshot_")).count(), 1);
}

#[test]
fn invalid_configs_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), json!({"output_times": [0.5]}));
    let out = symflow(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("output_times"));
    let cfg = config(tmp.path(), json!({"typo": 1}));
    assert_eq!(symflow(&["simulate", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    let out = symflow(&["verify", "--config", cfg.to_str().unwrap(), "--suite", "nope"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn overrides_patch_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), json!({}));
    let out_dir = tmp.path().join("other");
    let out = symflow(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--override",
        "T=0",
        "--override",
        "output_times=[]",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(contents(&out_dir).keys().filter(|k| k.starts_with("snapshot_")).count(), 1);
}

#[test]
fn verify_reports_each_check() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), json!({}));
    let out = symflow(&["verify", "--config", cfg.to_str().unwrap(), "--suite", "integrable-limit", "--suite", "reductions"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().filter(|l| l.starts_with("PASS [")).count() >= 9);
    let reports: Value = serde_json::from_slice(&std::fs::read(tmp.path().join("out/verify.json")).unwrap()).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 2);
    assert!(reports.as_array().unwrap().iter().all(|r| r["pass"] == true));
}

#[test]
fn reduce_writes_both_representations() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), json!({}));
    let out = symflow(&["reduce", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let files = contents(&tmp.path().join("out"));
    for f in ["reduce_initial.csv", "reduce_final.csv", "cross_check.csv", "manifest.json"] {
        assert!(files.contains_key(f), "missing {f}");
    }
    let csv = String::from_utf8(files["reduce_final.csv"].clone()).unwrap();
    assert_eq!(csv.lines().count(), 33);
}
