//! End-to-end checks of the command-line interface.

mod common;

use std::fs;
use std::path::Path;
use std::time::Instant;

use common::{csv_rows, json, ok, run, tree};
use tempfile::TempDir;

fn exit_code(dir: &Path, args: &[&str]) -> i32 {
    run(dir, args).status.code().expect("exit code")
}

fn small_gen(dir: &Path, out: &str, extra: &[&str]) {
    let base = ["gen", "--trials-per-class", "4", "--trial-seconds", "5", "--out", out];
    ok(dir, &[&base[..], extra].concat());
}

fn offline_accuracy(dir: &Path, eval_dir: &str) -> f64 {
    json(&dir.join(eval_dir).join("eval.json"))["summary"][0]["accuracy"]
        .as_f64()
        .unwrap()
}

#[test]
fn gen_is_reproducible_and_uses_documented_defaults() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(dir, &["gen", "--seed", "3", "--out", "a"]);
    ok(dir, &["gen", "--seed", "3", "--out", "b"]);
    assert_eq!(tree(&dir.join("a")), tree(&dir.join("b")));
    let manifest = json(&dir.join("a/manifest.json"));
    assert_eq!(manifest["format"], "EEGSET");
    assert_eq!(manifest["version"], 1);
    assert_eq!(manifest["classes"], 4);
    assert_eq!(manifest["labels"].as_array().unwrap().len(), 32);
    assert_eq!(csv_rows(&dir.join("a/labels.csv")).len(), 32);
    assert!(dir.join("a/trial_0031.f64").exists());
    assert_eq!(json(&dir.join("a/run.json"))["command"], "gen");

    ok(dir, &["gen", "--seed", "4", "--out", "c"]);
    assert_ne!(tree(&dir.join("a")), tree(&dir.join("c")));
}

#[test]
fn clean_data_trains_and_evaluates_accurately() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    small_gen(dir, "train", &["--snr-db", "40"]);
    small_gen(dir, "test", &["--snr-db", "40", "--session", "1"]);
    ok(dir, &["train", "--data", "train", "--out", "model"]);
    assert!(dir.join("model/model.mdrm").exists());
    assert!(json(&dir.join("model/train.json"))["training_accuracy"].as_f64().unwrap() >= 90.0);
    ok(dir, &["eval", "--model", "model/model.mdrm", "--data", "test", "--out", "eval"]);
    assert!(offline_accuracy(dir, "eval") >= 90.0);
    for run_dir in ["train", "model", "eval"] {
        assert!(dir.join(run_dir).join("run.json").exists(), "{run_dir}");
    }
}

#[test]
fn eval_reports_every_method_per_trial() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    small_gen(dir, "train", &["--snr-db", "10"]);
    small_gen(dir, "test", &["--snr-db", "10", "--session", "1"]);
    ok(dir, &["train", "--data", "train", "--out", "model"]);
    ok(dir, &["eval", "--model", "model/model.mdrm", "--data", "test", "--train", "train", "--out", "eval"]);

    let text = fs::read_to_string(dir.join("eval/eval.csv")).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    for method in ["offline_acc", "offline_opt_acc", "online_acc", "online_curve_acc"] {
        assert!(header.contains(&method), "{method}");
    }
    let rows = csv_rows(&dir.join("eval/eval.csv"));
    assert_eq!(rows.len(), 16 + 1);
    assert_eq!(rows.last().unwrap()[0], "mean");
    for row in &rows[..16] {
        assert_eq!(row.len(), header.len());
        for (name, cell) in header.iter().zip(row) {
            if name.ends_with("_acc") && !cell.is_empty() {
                assert!(cell == "100" || cell == "0", "{name} = {cell}");
            }
            // a decision needs at least one step after onset
            if name.ends_with("_delay_s") && !cell.is_empty() {
                assert!(cell.parse::<f64>().unwrap() >= 0.2 - 1e-9, "{name} = {cell}");
            }
        }
    }
    let summary = json(&dir.join("eval/eval.json"))["summary"].clone();
    let methods: Vec<&str> = summary
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["method"].as_str().unwrap())
        .collect();
    assert_eq!(methods, ["offline", "offline_opt", "online", "online_curve"]);
    for m in summary.as_array().unwrap() {
        let total = m["decided"].as_u64().unwrap() + m["held_back"].as_u64().unwrap();
        assert_eq!(total, 16);
    }
    assert_eq!(csv_rows(&dir.join("eval/summary.csv")).len(), 4);
}

#[test]
fn curve_gate_is_not_worse_on_carryover_data() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let common = ["--seed", "7", "--snr-db", "0", "--carryover", "1"];
    small_gen(dir, "train", &common);
    small_gen(dir, "test", &[&common[..], &["--session", "1"]].concat());
    ok(dir, &["train", "--data", "train", "--latency", "2", "--out", "model"]);
    ok(dir, &["eval", "--model", "model/model.mdrm", "--data", "test", "--out", "eval"]);
    let summary = json(&dir.join("eval/eval.json"))["summary"].clone();
    let acc = |i: usize| summary[i]["accuracy"].as_f64().unwrap_or(0.0);
    assert!(acc(3) >= acc(2), "curve {} < plain {}", acc(3), acc(2));
}

#[test]
fn shrinkage_is_not_worse_than_sample_covariance_on_short_crops() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    small_gen(dir, "train", &["--seed", "5", "--snr-db", "5"]);
    small_gen(dir, "test", &["--seed", "5", "--snr-db", "5", "--session", "1"]);
    let mut accs = Vec::new();
    for est in ["scm", "schafer"] {
        let model = format!("model_{est}");
        let eval = format!("eval_{est}");
        ok(dir, &["train", "--data", "train", "--estimator", est, "--duration", "0.5",
                  "--mean-tolerance", "1e-6", "--out", &model]);
        ok(dir, &["eval", "--model", &format!("{model}/model.mdrm"), "--data", "test", "--out", &eval]);
        accs.push(offline_accuracy(dir, &eval));
    }
    assert!(accs[1] >= accs[0], "schafer {} < scm {}", accs[1], accs[0]);
}

#[test]
fn failures_map_to_documented_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    small_gen(dir, "data", &[]);

    // non-empty output directory without --force
    assert_eq!(exit_code(dir, &["gen", "--out", "data"]), 2);
    ok(dir, &["gen", "--trials-per-class", "4", "--trial-seconds", "5", "--force", "--out", "data"]);
    // unknown flag value and bad estimator name
    assert_eq!(exit_code(dir, &["train", "--data", "data", "--estimator", "oas", "--out", "x1"]), 2);
    assert_eq!(exit_code(dir, &["gen", "--trials-per-class", "0", "--out", "x2"]), 2);
    // missing input
    assert_eq!(exit_code(dir, &["train", "--data", "nowhere", "--out", "x3"]), 4);
    // mean that cannot converge in one iteration
    assert_eq!(exit_code(dir, &["train", "--data", "data", "--mean-iterations", "1", "--out", "x4"]), 3);

    // a class without trials
    fs::create_dir(dir.join("holey")).unwrap();
    for entry in fs::read_dir(dir.join("data")).unwrap() {
        let path = entry.unwrap().path();
        fs::copy(&path, dir.join("holey").join(path.file_name().unwrap())).unwrap();
    }
    let mut manifest = json(&dir.join("holey/manifest.json"));
    for label in manifest["labels"].as_array_mut().unwrap() {
        if label == 2 {
            *label = 1.into();
        }
    }
    fs::write(dir.join("holey/manifest.json"), serde_json::to_string_pretty(&manifest).unwrap()).unwrap();
    let labels: String = std::iter::once("trial,label".to_string())
        .chain(manifest["labels"].as_array().unwrap().iter().enumerate().map(|(i, l)| format!("{i},{l}")))
        .map(|l| l + "\n")
        .collect();
    fs::write(dir.join("holey/labels.csv"), labels).unwrap();
    let out = run(dir, &["train", "--data", "holey", "--out", "x5"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bench_reports_conditioning_and_discrimination() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let start = Instant::now();
    ok(dir, &["bench", "--replications", "10", "--out", "bench"]);
    assert!(start.elapsed().as_secs() < 60, "bench took {:?}", start.elapsed());

    let text = fs::read_to_string(dir.join("bench/bench.csv")).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let rows = csv_rows(&dir.join("bench/bench.csv"));
    assert_eq!(rows.len(), 6 * 10);
    for row in &rows {
        if row[0] == "scm" {
            let idi: f64 = row[col("idi_mean")].parse().unwrap();
            assert_eq!(idi, 0.0);
        }
        if !row[col("acc_mean")].is_empty() {
            assert!(!row[col("condition_mean")].is_empty());
        }
    }
    assert_eq!(json(&dir.join("bench/run.json"))["command"], "bench");
}

#[test]
fn embedding_of_identical_trials_collapses_to_origin() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    small_gen(dir, "data", &[]);
    let first = dir.join("data/trial_0000.f64");
    for i in 1..16 {
        fs::copy(&first, dir.join(format!("data/trial_{i:04}.f64"))).unwrap();
    }
    ok(dir, &["embed", "--data", "data", "--out", "embed"]);
    for row in csv_rows(&dir.join("embed/embedding.csv")) {
        let x: f64 = row[3].parse().unwrap();
        let y: f64 = row[4].parse().unwrap();
        assert!(x.abs() < 1e-9 && y.abs() < 1e-9, "{row:?}");
    }
}

#[test]
fn embedding_separates_clean_classes_and_tracks_potato() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    small_gen(dir, "data", &["--snr-db", "10"]);
    ok(dir, &["train", "--data", "data", "--out", "model"]);
    ok(dir, &["embed", "--data", "data", "--model", "model/model.mdrm", "--out", "embed"]);
    let report = json(&dir.join("embed/embedding.json"))["embedding"].clone();
    let centroids: Vec<(f64, f64)> = report["class_centroids"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| (c[0].as_f64().unwrap(), c[1].as_f64().unwrap()))
        .collect();
    let spread: Vec<f64> = report["class_spread"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s.as_f64().unwrap())
        .collect();
    assert_eq!(report["centers"].as_array().unwrap().len(), 4);
    // every pair of classes is further apart than either spreads
    let mut separated = 0;
    let mut pairs = 0;
    for a in 0..centroids.len() {
        for b in a + 1..centroids.len() {
            let d = ((centroids[a].0 - centroids[b].0).powi(2)
                + (centroids[a].1 - centroids[b].1).powi(2))
            .sqrt();
            pairs += 1;
            if d > spread[a].max(spread[b]) {
                separated += 1;
            }
        }
    }
    assert!(separated * 2 > pairs, "{separated}/{pairs} pairs separated");

    ok(dir, &["embed", "--data", "data", "--potato-z", "1.0", "--out", "embed_potato"]);
    let before = csv_rows(&dir.join("embed_potato/embedding_before.csv"));
    let after = csv_rows(&dir.join("embed_potato/embedding_after.csv"));
    let trials = |rows: &[Vec<String>]| rows.iter().filter(|r| r[0] == "trial").count();
    let kept = csv_rows(&dir.join("embed_potato/potato.csv"))
        .iter()
        .filter(|r| r[4] == "1")
        .count();
    assert_eq!(trials(&before), 16);
    assert_eq!(trials(&after), kept);
}
