use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::json;

fn opencity(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_opencity")).args(args).output().expect("binary runs")
}

fn write(path: &Path, value: serde_json::Value) -> String {
    fs::write(path, serde_json::to_string_pretty(&value).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn city(name: &str, regions: usize, rate: u32, seed: u64) -> serde_json::Value {
    json!({
        "name": name,
        "regions": regions,
        "days": 6,
        "sample_rate_minutes": rate,
        "network_kind": "sensor",
        "base_volume": 100.0,
        "region_scale_spread": 0.5,
        "noise_level": 0.1,
        "seed": seed
    })
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Generates two hourly cities and a 30-minute one, then pre-trains on the
/// first for a single epoch. Returns the synth and training output dirs.
fn pretrained(root: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let data = root.join("data");
    let synth = write(
        &root.join("synth.json"),
        json!({ "cities": [city("a", 12, 60, 1), city("b", 12, 60, 2), city("half", 12, 30, 3)] }),
    );
    let o = opencity(&["synth", "--config", &synth, "--out", data.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let train = root.join("train");
    let cfg = write(
        &root.join("pretrain.json"),
        json!({ "datasets": ["data/a"], "preset": "mini", "train": { "max_epochs": 1, "lr": 1e-4 } }),
    );
    let o = opencity(&["pretrain", "--config", &cfg, "--seed", "3", "--out", train.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    (data, train)
}

#[test]
fn missing_config_is_a_usage_error() {
    let o = opencity(&["pretrain"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--config"), "{}", stderr(&o));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let o = opencity(&["train-everything", "--config", "x.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).to_lowercase().contains("usage"));
}

#[test]
fn unreadable_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    let o = opencity(&["synth", "--config", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn end_to_end_commands() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let (_, train) = pretrained(root);
    let ckpt = train.join("checkpoint.ockpt");
    assert!(ckpt.is_file());
    let history: serde_json::Value = serde_json::from_str(&fs::read_to_string(train.join("history.json")).unwrap()).unwrap();
    assert_eq!(history.as_array().unwrap().len(), 1);

    let eval = write(&root.join("eval.json"), json!({ "checkpoint": "train/checkpoint.ockpt", "dataset": "data/b" }));
    let out = root.join("eval");
    let o = opencity(&["eval-zeroshot", "--config", &eval, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("zeroshot.json")).unwrap()).unwrap();
    assert_eq!(report["model"]["per_horizon_mae"].as_array().unwrap().len(), 24);
    assert!(report["seasonal_naive"]["mae"].as_f64().unwrap() > 0.0);

    let o = opencity(&["predict", "--config", &eval, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = fs::read_to_string(out.join("predictions.csv")).unwrap().lines().count() - 1;
    // Full span of 144 hourly steps: forecast days 1..=5 for 12 regions.
    assert_eq!(rows, 5 * 12 * 24);

    let ft = write(
        &root.join("ft.json"),
        json!({ "checkpoint": "train/checkpoint.ockpt", "dataset": "data/b", "train": { "lr": 1e-4 } }),
    );
    let o = opencity(&["finetune", "--config", &ft, "--out", root.join("ft").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(root.join("ft/checkpoint.ockpt").is_file());

    let lat = write(
        &root.join("lat.json"),
        json!({ "checkpoint": "train/checkpoint.ockpt", "dataset": "data/b", "repeats": 2 }),
    );
    let o = opencity(&["latency", "--config", &lat, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("latency.json").is_file());

    let mismatch = write(
        &root.join("mismatch.json"),
        json!({ "checkpoint": "train/checkpoint.ockpt", "dataset": "data/half" }),
    );
    let o = opencity(&["eval-zeroshot", "--config", &mismatch, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sampled every 30 min"), "{}", stderr(&o));
}

#[test]
fn identical_runs_write_identical_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (data_a, train_a) = pretrained(a.path());
    let (data_b, train_b) = pretrained(b.path());
    for rel in ["a/data.csv", "a/adjacency.csv", "a/meta.json", "half/data.csv"] {
        assert_eq!(fs::read(data_a.join(rel)).unwrap(), fs::read(data_b.join(rel)).unwrap(), "{rel}");
    }
    assert_eq!(
        fs::read(train_a.join("checkpoint.ockpt")).unwrap(),
        fs::read(train_b.join("checkpoint.ockpt")).unwrap()
    );
}
