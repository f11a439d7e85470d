mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::{fixture_config, write_fixture};
use serde_json::Value;

fn orgapipe(cache: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orgapipe"))
        .arg("--cache")
        .arg(cache)
        .args(args)
        .env_remove("ORGAPIPE_CACHE")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn setup(dir: &Path) -> std::path::PathBuf {
    let input = write_fixture(dir, 5);
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, fixture_config(&input, &dir.join("out"))).unwrap();
    cfg
}

#[test]
fn full_run_writes_exports_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let cfg = cfg.to_str().unwrap();

    let a = stdout_json(&orgapipe(&dir.path().join("c1"), &["run", cfg]));
    assert_eq!(a["stages"].as_array().unwrap().len(), 6);
    assert_eq!(a["track"]["tracks"], 3);
    let outputs: Vec<String> = a["outputs"].as_array().unwrap().iter().map(|p| p.as_str().unwrap().to_string()).collect();
    assert!(outputs.iter().any(|p| p.ends_with("detections.csv")));
    assert!(outputs.iter().any(|p| p.ends_with("masks_frame004.npy")));
    let csv_a = std::fs::read(dir.path().join("out/detections.csv")).unwrap();
    let json_a = std::fs::read(dir.path().join("out/session.json")).unwrap();

    let b = stdout_json(&orgapipe(&dir.path().join("c2"), &["run", cfg]));
    assert_eq!(a["image_hash"], b["image_hash"]);
    assert_eq!(csv_a, std::fs::read(dir.path().join("out/detections.csv")).unwrap());
    assert_eq!(json_a, std::fs::read(dir.path().join("out/session.json")).unwrap());
}

#[test]
fn missing_input_exits_2_with_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, fixture_config(&dir.path().join("absent.tif"), dir.path())).unwrap();
    let out = orgapipe(&dir.path().join("cache"), &["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "config");
    assert!(err["error"]["message"].as_str().unwrap().contains("absent.tif"));
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[input]\npath = 3\n").unwrap();
    let out = orgapipe(&dir.path().join("cache"), &["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn single_stage_runs_resume_from_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let cfg = cfg.to_str().unwrap();
    let cache = dir.path().join("cache");

    let r = stdout_json(&orgapipe(&cache, &["run", cfg, "--stage", "detect"]));
    assert_eq!(r["stages"], serde_json::json!(["detect"]));
    assert!(r["outputs"].as_array().unwrap().is_empty());
    assert!(Path::new(r["session_path"].as_str().unwrap()).exists());
    assert!(!dir.path().join("out").exists());

    let r = stdout_json(&orgapipe(&cache, &["run", cfg, "--stage", "filter,track", "--stage", "segment"]));
    assert_eq!(r["track"]["tracks"], 3);
    assert_eq!(r["stages"], serde_json::json!(["filter", "track", "segment"]));

    // Tracking on a fresh cache has nothing to resume.
    let out = orgapipe(&dir.path().join("empty"), &["run", cfg, "--stage", "track"]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["stage"], "track");

    let out = orgapipe(&cache, &["run", cfg, "--stage", "nope"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn export_command_reads_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let cache = dir.path().join("cache");
    let report = stdout_json(&orgapipe(&cache, &["run", cfg.to_str().unwrap()]));
    let image = dir.path().join("disks_5.tif");

    let by_image = orgapipe(&cache, &["export", "--image", image.to_str().unwrap()]);
    assert!(by_image.status.success());
    assert_eq!(by_image.stdout, std::fs::read(dir.path().join("out/detections.csv")).unwrap());

    let hash = report["image_hash"].as_str().unwrap();
    let npy = dir.path().join("f2.npy");
    let out = orgapipe(
        &cache,
        &["export", "--hash", hash, "--format", "npy", "--frame", "2", "--out", npy.to_str().unwrap()],
    );
    assert!(out.status.success());
    assert_eq!(std::fs::read(npy).unwrap(), std::fs::read(dir.path().join("out/masks_frame002.npy")).unwrap());

    let out = orgapipe(&dir.path().join("empty"), &["export", "--hash", hash]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no cached session"));
    let out = orgapipe(&cache, &["export", "--hash", "xyz"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_command_reports_cv_and_writes_model() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("train.csv");
    let mut text = String::from("a,b,label\n");
    for i in 0..40 {
        let (x, label) = if i % 2 == 0 { (i as f64 * 0.01, "small") } else { (5.0 + i as f64 * 0.01, "large") };
        text.push_str(&format!("{x},{},{label}\n", 1.0 - x));
    }
    text.push_str(",1,small\n");
    std::fs::write(&csv, text).unwrap();
    let model = dir.path().join("m.bin");
    let out = orgapipe(
        &dir.path().join("cache"),
        &[
            "train", "--csv", csv.to_str().unwrap(), "--label", "label", "--arch", "knn",
            "--param", "k=3", "--folds", "5", "--out", model.to_str().unwrap(),
        ],
    );
    let v = stdout_json(&out);
    assert_eq!(v["n_samples"], 40);
    assert_eq!(v["dropped"], 1);
    assert_eq!(v["report"]["cv"]["per_fold"].as_array().unwrap().len(), 5);
    assert_eq!(v["report"]["cv"]["mean"], 1.0);
    assert!(std::fs::metadata(&model).unwrap().len() > 0);

    let out = orgapipe(&dir.path().join("cache"), &["train", "--csv", csv.to_str().unwrap(), "--label", "zzz", "--arch", "knn"]);
    assert_eq!(out.status.code(), Some(1));
}
