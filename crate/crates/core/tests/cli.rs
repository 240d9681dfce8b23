use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn mimax(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mimax"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = mimax(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn small_dataset(dir: &Path, name: &str, seed: &str) {
    ok(
        &["gen-synthetic", "--out", name, "--seed", seed, "--truth-seed", "7", "--dim", "8", "--pos", "10", "--neg", "10",
          "--min-regions", "6", "--max-regions", "10"],
        dir,
    );
}

const QUICK: [&str; 4] = ["--restarts", "2", "--iters", "60"];

#[test]
fn missing_dataset_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = mimax(&["report", "--dataset", "absent.fbag", "--out-dir", "out", "--runs", "1"], dir.path());
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
    assert!(!dir.path().join("out").exists());

    let out = mimax(&["train", "--dataset", "absent.fbag", "--model-out", "m.mimx"], dir.path());
    assert!(!out.status.success());
    assert!(!dir.path().join("m.mimx").exists());
}

#[test]
fn single_run_aggregate_has_zero_spread() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path(), "d.fbag", "1");
    let mut args = vec!["report", "--dataset", "d.fbag", "--out-dir", "r", "--runs", "1"];
    args.extend(QUICK);
    ok(&args, dir.path());
    let agg = json(&dir.path().join("r/aggregate.json"));
    let run = json(&dir.path().join("r/run_000.json"));
    assert_eq!(agg["map"]["std"], 0.0);
    assert_eq!(agg["map"]["mean"], run["map"]);
    assert_eq!(agg["classes"][0]["ap"]["mean"], run["classes"][0]["ap"]);
    assert!(dir.path().join("r/aggregate.txt").exists());
}

#[test]
fn aggregate_matches_per_seed_files() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path(), "d.fbag", "1");
    small_dataset(dir.path(), "t.fbag", "2");
    let mut args = vec!["report", "--dataset", "d.fbag", "--test-dataset", "t.fbag", "--out-dir", "r", "--runs", "3", "--seed", "40"];
    args.extend(QUICK);
    ok(&args, dir.path());
    let agg = json(&dir.path().join("r/aggregate.json"));
    let runs: Vec<Value> = (0..3).map(|i| json(&dir.path().join(format!("r/run_{i:03}.json")))).collect();
    let seeds: Vec<u64> = runs.iter().map(|r| r["provenance"]["seed"].as_u64().unwrap()).collect();
    assert_eq!(seeds, [40, 41, 42]);
    for (metric, key) in [("map", None), ("ap", Some("ap")), ("training_loss", Some("training_loss"))] {
        let values: Vec<f64> = runs
            .iter()
            .map(|r| match key {
                None => r["map"].as_f64().unwrap(),
                Some(k) => r["classes"][0][k].as_f64().unwrap(),
            })
            .collect();
        let mean = values.iter().sum::<f64>() / 3.0;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
        let stat = match key {
            None => &agg["map"],
            Some(k) => &agg["classes"][0][k],
        };
        assert!((stat["mean"].as_f64().unwrap() - mean).abs() < 1e-12, "{metric}");
        assert!((stat["std"].as_f64().unwrap() - std).abs() < 1e-12, "{metric}");
    }
    assert!(!serde_json::to_string(&agg).unwrap().contains("jobs"));
}

#[test]
fn train_detect_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path(), "d.fbag", "1");
    let mut args = vec!["train", "--dataset", "d.fbag", "--model-out", "m.mimx", "--variant", "polyhedral", "--hyperplanes", "2"];
    args.extend(QUICK);
    ok(&args, dir.path());
    ok(&["detect", "--dataset", "d.fbag", "--model", "m.mimx", "--out", "d.jsonl"], dir.path());
    let lines = std::fs::read_to_string(dir.path().join("d.jsonl")).unwrap();
    for line in lines.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert!(v["score"].as_f64().unwrap() > 0.05);
        assert_eq!(v["box"].as_array().unwrap().len(), 4);
    }
    let table = ok(&["eval", "--dataset", "d.fbag", "--model", "m.mimx", "--out", "e.json"], dir.path());
    assert!(table.contains("AP (%)"));
    let report = json(&dir.path().join("e.json"));
    assert_eq!(report["provenance"]["train"]["class0"]["variant"]["type"], "polyhedral");
    let transfer = ok(&["transfer", "--dataset", "d.fbag", "--model", "m.mimx"], dir.path());
    assert_eq!(table, transfer);
}

#[test]
fn shared_truth_seed_shares_separators() {
    let dir = tempfile::tempdir().unwrap();
    for (name, seed) in [("a", "1"), ("b", "2")] {
        ok(&["gen-synthetic", "--out", &format!("{name}.fbag"), "--seed", seed, "--truth-seed", "9", "--truth-out",
             &format!("{name}.json"), "--dim", "4", "--pos", "3", "--neg", "3"], dir.path());
    }
    let (a, b) = (json(&dir.path().join("a.json")), json(&dir.path().join("b.json")));
    assert_eq!(a["separators"], b["separators"]);
    assert_ne!(a["instance_labels"], b["instance_labels"]);
}

#[test]
fn restart_ablation_losses_do_not_increase() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path(), "d.fbag", "3");
    ok(
        &["ablate", "--dataset", "d.fbag", "--out-dir", "abl", "--runs", "2", "--iters", "60", "--axis", "restarts",
          "--values", "1,3,6"],
        dir.path(),
    );
    let table = json(&dir.path().join("abl/ablation.json"));
    let losses: Vec<f64> = table["rows"].as_array().unwrap().iter().map(|r| r["training_loss"].as_f64().unwrap()).collect();
    assert_eq!(losses.len(), 3);
    assert!(losses.windows(2).all(|w| w[1] <= w[0]), "{losses:?}");
    let csv = std::fs::read_to_string(dir.path().join("abl/ablation.csv")).unwrap();
    assert!(csv.starts_with("restarts,map_mean,map_std,training_loss"));
    assert_eq!(csv.lines().count(), 4);

    // each cell is exactly the report run_experiment would produce
    ok(&["report", "--dataset", "d.fbag", "--out-dir", "single", "--runs", "2", "--iters", "60", "--restarts", "3"], dir.path());
    for file in ["aggregate.json", "run_000.json", "run_001.json"] {
        assert_eq!(
            std::fs::read(dir.path().join("abl/restarts=3").join(file)).unwrap(),
            std::fs::read(dir.path().join("single").join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path(), "d.fbag", "1");
    std::fs::write(dir.path().join("c.json"), r#"{"restarts": 1, "iterations": 20, "C": 0.25, "loss": "hinge"}"#).unwrap();
    ok(&["train", "--dataset", "d.fbag", "--model-out", "m.mimx", "--config", "c.json", "--C", "0.5"], dir.path());
    ok(&["eval", "--dataset", "d.fbag", "--model", "m.mimx", "--out", "e.json"], dir.path());
    let train = &json(&dir.path().join("e.json"))["provenance"]["train"]["class0"];
    assert_eq!(train["C"], 0.5);
    assert_eq!(train["restarts"], 1);
    assert_eq!(train["loss"], "hinge");
}

#[test]
fn invalid_flag_values_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path(), "d.fbag", "1");
    for bad in [["--restarts", "0"], ["--lr", "-1"], ["--variant", "cubic"]] {
        let mut args = vec!["train", "--dataset", "d.fbag", "--model-out", "m.mimx"];
        args.extend(bad);
        assert!(!mimax(&args, dir.path()).status.success(), "{bad:?}");
    }
    assert!(!dir.path().join("m.mimx").exists());
}
