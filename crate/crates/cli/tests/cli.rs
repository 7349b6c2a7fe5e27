//! End-to-end tests of the `rjm` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rjm"))
}

fn workspace_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = bin().current_dir(dir).args(args).output().expect("binary runs");
    if !out.status.success() {
        eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

/// Structural equality with a relative tolerance on numbers.
fn json_close(a: &Value, b: &Value, path: &str) -> Result<(), String> {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            if (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0) {
                Ok(())
            } else {
                Err(format!("{path}: {x} vs {y}"))
            }
        }
        (Value::Array(x), Value::Array(y)) if x.len() == y.len() => x
            .iter()
            .zip(y)
            .enumerate()
            .try_for_each(|(i, (u, v))| json_close(u, v, &format!("{path}[{i}]"))),
        (Value::Object(x), Value::Object(y)) if x.len() == y.len() => x.iter().try_for_each(|(k, u)| {
            let v = y.get(k).ok_or_else(|| format!("{path}.{k} missing"))?;
            json_close(u, v, &format!("{path}.{k}"))
        }),
        _ if a == b => Ok(()),
        _ => Err(format!("{path}: {a} vs {b}")),
    }
}

#[test]
fn fit_matches_golden_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = workspace_file("data/example.csv");
    let out = run(
        dir.path(),
        &["fit", "--data", data.to_str().unwrap(), "--k", "2", "--scheme", "nj", "--seed", "1", "--out", "model.json"],
    );
    assert!(out.status.success());
    let got: Value = serde_json::from_slice(&std::fs::read(dir.path().join("model.json")).unwrap()).unwrap();
    let golden: Value =
        serde_json::from_slice(&std::fs::read(workspace_file("crates/cli/tests/golden/example_model.json")).unwrap()).unwrap();
    json_close(&got, &golden, "model").unwrap();
    for f in ["model.labels.csv", "model.trace.csv", "model.manifest.json"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
}

#[test]
fn k1_labels_are_all_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = workspace_file("data/example.csv");
    let out = run(dir.path(), &["fit", "--data", data.to_str().unwrap(), "--k", "1", "--out", "m.json"]);
    assert!(out.status.success());
    let rows = read_csv(&dir.path().join("m.labels.csv"));
    assert_eq!(rows[0], ["row", "label"]);
    assert_eq!(rows.len(), 101);
    assert!(rows[1..].iter().all(|r| r[1] == "1"));

    let out = run(dir.path(), &["predict", "--model", "m.json", "--data", data.to_str().unwrap(), "--out", "p.csv"]);
    assert!(out.status.success());
    let rows = read_csv(&dir.path().join("p.csv"));
    assert_eq!(rows[0], ["row", "hard_cluster", "prob_1", "y_hat"]);
    assert!(rows[1..].iter().all(|r| r[1] == "1"));
}

#[test]
fn malformed_row_exits_2_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.csv"), "y,x1,x2\n1,2,3\n4,5,oops\n").unwrap();
    let out = run(dir.path(), &["fit", "--data", "bad.csv", "--k", "1", "--out", "m.json"]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("line 3"), "{msg}");
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = workspace_file("data/example.csv");
    let d = data.to_str().unwrap();
    for args in [
        vec!["fit", "--data", d, "--k", "2", "--scheme", "lasso", "--out", "m.json"],
        vec!["select-k", "--data", d, "--k-candidates", "2,x", "--out", "s.csv"],
        vec!["select-k", "--data", d, "--k-candidates", "0,2", "--out", "s.csv"],
        vec!["simulate", "--scenario", "nope", "--out-dir", "o"],
        vec!["simulate", "--scenario", "semisynth", "--p", "20", "--out-dir", "o"],
        vec!["fit", "--k", "2"],
    ] {
        let out = run(dir.path(), &args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn collapse_everywhere_exits_3() {
    // A single homogeneous group cannot support four clusters; every start collapses.
    let dir = tempfile::tempdir().unwrap();
    let data = workspace_file("crates/cli/tests/data/one_group.csv");
    let out = run(
        dir.path(),
        &["fit", "--data", data.to_str().unwrap(), "--k", "4", "--starts", "3", "--out", "m.json"],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("discarded"));
    assert!(!dir.path().join("m.json").exists());
}

#[test]
fn predict_dimension_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let model = workspace_file("crates/cli/tests/golden/example_model.json");
    std::fs::write(dir.path().join("x.csv"), "x1,x2\n1,2\n").unwrap();
    let out = run(dir.path(), &["predict", "--model", model.to_str().unwrap(), "--data", "x.csv", "--out", "p.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn predict_rows_are_normalized_and_reproduce_training_labels() {
    let dir = tempfile::tempdir().unwrap();
    let data = workspace_file("data/example.csv");
    let model = workspace_file("crates/cli/tests/golden/example_model.json");
    let out = run(
        dir.path(),
        &["predict", "--model", model.to_str().unwrap(), "--data", data.to_str().unwrap(), "--out", "p.csv"],
    );
    assert!(out.status.success());
    let rows = read_csv(&dir.path().join("p.csv"));
    assert_eq!(rows[0], ["row", "hard_cluster", "prob_1", "prob_2", "y_hat"]);
    let truth = read_csv(&workspace_file("data/example_labels.csv"));
    let mut agree = 0;
    for (r, t) in rows[1..].iter().zip(&truth[1..]) {
        let s: f64 = r[2].parse::<f64>().unwrap() + r[3].parse::<f64>().unwrap();
        assert!((s - 1.0).abs() < 1e-10);
        agree += usize::from(r[1] == t[1]);
    }
    // X-only allocation on a unit mean shift: most rows land with their generating group
    // (up to a label swap).
    let agree = agree.max(100 - agree);
    assert!(agree >= 70, "{agree}");
}

#[test]
fn predict_on_separated_training_data_reproduces_fit_labels() {
    let dir = tempfile::tempdir().unwrap();
    let sim = run(
        dir.path(),
        &["simulate", "--scenario", "appendixA", "--d", "4", "--seed", "3", "--out-dir", "sim"],
    );
    assert!(sim.status.success());
    let fit = run(dir.path(), &["fit", "--data", "sim/data.csv", "--k", "2", "--seed", "3", "--out", "m.json"]);
    assert!(fit.status.success());
    let pred = run(dir.path(), &["predict", "--model", "m.json", "--data", "sim/data.csv", "--out", "p.csv"]);
    assert!(pred.status.success());
    let labels = read_csv(&dir.path().join("m.labels.csv"));
    let preds = read_csv(&dir.path().join("p.csv"));
    for (l, p) in labels[1..].iter().zip(&preds[1..]) {
        assert_eq!(l[1], p[1], "row {}", l[0]);
    }
}

#[test]
fn simulate_fallback_and_identical_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["simulate", "--scenario", "semisynth", "--p", "20", "--sparsity", "0.1", "--seed", "1", "--out-dir", "s"],
    );
    assert!(out.status.success());
    let manifest: Value = serde_json::from_slice(&std::fs::read(dir.path().join("s/manifest.json")).unwrap()).unwrap();
    let notes = manifest["notes"].to_string();
    assert!(notes.contains("synthetic-fallback"), "{notes}");

    let out = run(dir.path(), &["simulate", "--scenario", "toy51", "--case", "C", "--d", "0", "--seed", "1", "--out-dir", "c"]);
    assert!(out.status.success());
    let truth: Value = serde_json::from_slice(&std::fs::read(dir.path().join("c/truth.json")).unwrap()).unwrap();
    assert_eq!(truth["identical_groups"], Value::Bool(true));
}

#[test]
fn select_k_records_split_sizes_and_single_candidate_wins() {
    let dir = tempfile::tempdir().unwrap();
    let data = workspace_file("data/example.csv");
    let out = run(
        dir.path(),
        &["select-k", "--data", data.to_str().unwrap(), "--k-candidates", "2", "--split", "0.8", "--seed", "4", "--out", "s.csv"],
    );
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("best K = 2"));
    let manifest: Value = serde_json::from_slice(&std::fs::read(dir.path().join("s.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["settings"]["n_train"], 80);
    assert_eq!(manifest["settings"]["n_test"], 20);
    assert_eq!(manifest["settings"]["best_k"], 2);
}

#[test]
fn micro_experiment_emits_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["experiment", "--scenario", "toy51", "--d-grid", "1", "--reps", "1", "--schemes", "nj", "--out", "r.csv"],
    );
    assert!(out.status.success());
    let rows = read_csv(&dir.path().join("r.csv"));
    assert_eq!(rows[0], ["method", "metric", "case", "d", "rep", "value", "status"]);
    assert!(rows.len() >= 2);
    assert!(rows[1..].iter().any(|r| r[1] == "ari" && r[6] == "ok"));
}
