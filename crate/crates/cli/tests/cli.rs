use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn tsnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsnn")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = tsnn(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Three sensors, period 24, twenty days of mildly noisy data.
fn dataset(dir: &Path) -> PathBuf {
    let d = dir.join("data");
    ok(&[
        "synth", "--steps", "480", "--sensors", "3", "--period", "24", "--noise", "0.05", "--seed", "4", "--out",
        d.to_str().unwrap(),
    ]);
    d.join("synthetic.csv")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_csv(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

const MODEL: [&str; 6] = ["--layers", "3", "--history", "6", "--horizon", "4"];

#[test]
fn build_writes_one_bank_per_sensor() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let all = dir.path().join("all");
    ok(&[&["build", "--data", s(&data), "--out", s(&all)][..], &MODEL].concat());
    let banks: Vec<_> = fs::read_dir(&all)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "bank"))
        .collect();
    assert_eq!(banks.len(), 3);
    assert!(all.join("run_manifest.json").exists());

    let one = dir.path().join("one");
    ok(&[&["build", "--data", s(&data), "--sensors", "1", "--out", s(&one)][..], &MODEL].concat());
    assert!(one.join("sensor_1.bank").exists());
    assert!(!one.join("sensor_0.bank").exists());
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let out = tsnn(&["build", "--data", s(&data), "--layers", "0", "--out", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(1));
    let out = tsnn(&["build", "--data", s(&data), "--sensors", "7", "--out", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(1));
    let out = tsnn(&["build", "--data", s(&data), "--scaling", "cubic"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(tsnn(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_are_structured_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.csv");
    let out = tsnn(&["validate", "--data", s(&missing), "--json"]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "data");
    assert_eq!(err["error"]["code"], 2);

    let data = dataset(dir.path());
    let out = tsnn(&["build", "--data", s(&data), "--layers", "0", "--json"]);
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "usage");
}

#[test]
fn validate_reports_shape() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let out = ok(&["validate", "--data", s(&data), "--json", "--out", s(&dir.path().join("v"))]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["n_steps"], 480);
    assert_eq!(v["n_sensors"], 3);
    assert_eq!(v["split_steps"][2][0], 384);
}

#[test]
fn strategies_give_the_same_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&[&["predict", "--data", s(&data), "--strategy", "standard", "--trace", "--out", s(&a)][..], &MODEL].concat());
    ok(&[&["predict", "--data", s(&data), "--strategy", "mem-efficient", "--out", s(&b)][..], &MODEL].concat());
    for sensor in 0..3 {
        let name = format!("predictions_sensor_{sensor}.csv");
        let (x, y) = (read_csv(&a.join(&name)), read_csv(&b.join(&name)));
        assert_eq!(x.len(), 96 - 6 - 4 + 1);
        assert_eq!(x[0].len(), 2 + 4);
        for (r, q) in x.iter().zip(&y) {
            for (u, v) in r.iter().zip(q) {
                assert!((u - v).abs() <= 1e-9);
            }
        }
    }
    let trace: Value = serde_json::from_str(&fs::read_to_string(a.join("trace_sensor_0.json")).unwrap()).unwrap();
    assert_eq!(trace[0]["trace"]["layers"].as_array().unwrap().len(), 3);
    assert!(!b.join("trace_sensor_0.json").exists());
}

#[test]
fn predictions_from_saved_banks_match_fresh_builds() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let banks = dir.path().join("banks");
    ok(&[&["build", "--data", s(&data), "--out", s(&banks)][..], &MODEL].concat());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&[&["predict", "--data", s(&data), "--banks", s(&banks), "--query", "0-9", "--out", s(&a)][..], &MODEL].concat());
    ok(&[&["predict", "--data", s(&data), "--query", "0-9", "--out", s(&b)][..], &MODEL].concat());
    let name = "predictions_sensor_2.csv";
    assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());
    assert_eq!(read_csv(&a.join(name)).len(), 10);

    let out = tsnn(&["predict", "--data", s(&data), "--banks", s(&dir.path().join("nowhere")), "--out", s(&a)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn layer_one_explanations_respect_the_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let out = dir.path().join("x");
    let q = 13;
    let stdout = ok(&[
        "explain", "--data", s(&data), "--sensor", "2", "--query", &q.to_string(), "--layers", "1", "--tolerance", "2",
        "--history", "6", "--horizon", "4", "--json", "--out", s(&out),
    ])
    .stdout;
    let summary: Value = serde_json::from_slice(&stdout).unwrap();
    assert!(summary["dominant_weekday"].is_string());
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("explain_sensor_2.json")).unwrap()).unwrap();
    // The test split starts at step 384; the query window starts q steps later.
    let p = (384 + q) % 24;
    for c in report["contributions"].as_array().unwrap() {
        let step = c["periodic_step"].as_u64().unwrap() as usize;
        let d = (step + 24 - p) % 24;
        let within = d.min(24 - d) <= 2;
        let value = c["value"].as_f64().unwrap();
        if !within {
            assert_eq!(value, 0.0);
        }
    }
    assert!(report["by_weekday"].as_array().is_some());
    assert!(out.join("explain_sensor_2.csv").exists());
}

#[test]
fn evaluate_and_rerun_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let first = dir.path().join("first");
    let out = ok(&[&["evaluate", "--data", s(&data), "--baseline", "--json", "--out", s(&first)][..], &MODEL].concat());
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary["average"]["mae"].as_f64().unwrap() > 0.0);
    let full: Value = serde_json::from_str(&fs::read_to_string(first.join("summary.json")).unwrap()).unwrap();
    assert_eq!(full["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(full["metrics"]["per_sensor"].as_array().unwrap().len(), 3);

    let manifest: Value = serde_json::from_str(&fs::read_to_string(first.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["invocation"]["command"], "evaluate");
    assert_eq!(manifest["invocation"]["config"]["kernel"]["gamma"], 10.0);
    assert_eq!(manifest["invocation"]["config"]["tolerance"], 3);

    let second = dir.path().join("second");
    ok(&["rerun", "--from", s(&first.join("run_manifest.json")), "--out", s(&second)]);
    for name in ["metrics.csv", "hi_metrics.csv", "summary.json"] {
        assert_eq!(fs::read(first.join(name)).unwrap(), fs::read(second.join(name)).unwrap(), "{name}");
    }

    fs::write(&data, "1\n").unwrap();
    let out = tsnn(&["rerun", "--from", s(&first.join("run_manifest.json")), "--out", s(&second)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweeps_write_one_row_per_grid_value() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let out = dir.path().join("s");
    ok(&[&["sweep", "--data", s(&data), "--axis", "layers", "--grid", "1,2,3", "--out", s(&out)][..], &MODEL].concat());
    let csv = fs::read_to_string(out.join("sweep_layers.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let json: Value = serde_json::from_str(&fs::read_to_string(out.join("sweep_layers.json")).unwrap()).unwrap();
    assert_eq!(json["points"].as_array().unwrap().len(), 3);

    ok(&[&["sweep", "--data", s(&data), "--axis", "scaling", "--out", s(&out)][..], &MODEL].concat());
    assert_eq!(fs::read_to_string(out.join("sweep_scaling.csv")).unwrap().lines().count(), 5);
    let missing = tsnn(&["sweep", "--data", s(&data), "--axis", "gamma", "--out", s(&out)]);
    assert_eq!(missing.status.code(), Some(1));
}
