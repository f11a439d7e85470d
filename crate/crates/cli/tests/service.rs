mod common;

use std::sync::Arc;
use std::time::Duration;

use axum::http::{Method, StatusCode};
use common::{fuzz, write_fixture, Api, TILING};
use orgapipe_core::detection::{BackendError, ClassicalDetector, Detector, ScoredBox};
use orgapipe_core::pipeline::Backends;
use orgapipe_core::segmentation::ClassicalSegmenter;
use orgapipe_core::Frame;
use serde_json::{json, Value};

#[tokio::test(flavor = "multi_thread")]
async fn healthz() {
    let dir = tempfile::tempdir().unwrap();
    let api = Api::new(dir.path());
    for uri in ["/healthz", "/v1/healthz"] {
        let (s, v) = api.json(Method::GET, uri, None).await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(v["status"], "ok");
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn upload_returns_201_with_hash() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_fixture(dir.path(), 1);
    let api = Api::new(&dir.path().join("cache"));
    let body = json!({ "path": path }).to_string();
    let (s, v) = api.json(Method::POST, "/v1/sessions", Some(&body)).await;
    assert_eq!(s, StatusCode::CREATED);
    let hash = v["hash"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    assert_eq!(v["image"]["width"], 160);
    let (s, _) = api.json(Method::POST, "/v1/sessions", Some(&body)).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test(flavor = "multi_thread")]
async fn upload_by_base64() {
    use base64::Engine as _;
    let dir = tempfile::tempdir().unwrap();
    let path = write_fixture(dir.path(), 2);
    let bytes = std::fs::read(&path).unwrap();
    let api = Api::new(&dir.path().join("cache"));
    let body = json!({ "image_base64": base64::engine::general_purpose::STANDARD.encode(bytes) }).to_string();
    let (s, v) = api.json(Method::POST, "/v1/sessions", Some(&body)).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    assert_eq!(v["image"]["frames"], 2);
}

#[tokio::test(flavor = "multi_thread")]
async fn bad_uploads_are_422() {
    let dir = tempfile::tempdir().unwrap();
    let api = Api::new(dir.path());
    for body in [r#"{"path": "/does/not/exist.tif"}"#, "{}", "not json", r#"{"image_base64": "!!"}"#] {
        let (s, _) = api.json(Method::POST, "/v1/sessions", Some(body)).await;
        assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn detect_job_runs_to_done_with_three_detections() {
    let dir = tempfile::tempdir().unwrap();
    let api = Api::new(&dir.path().join("cache"));
    let hash = api.upload(&write_fixture(dir.path(), 1)).await;
    let (s, v) = api.json(Method::POST, &format!("/v1/sessions/{hash}/detect"), Some(TILING)).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let id = v["job_id"].as_u64().unwrap();
    let (_, first) = api.json(Method::GET, &format!("/v1/jobs/{id}"), None).await;
    assert!(["pending", "running", "done"].contains(&first["status"].as_str().unwrap()));
    let done = api.wait_job(id).await;
    assert_eq!(done["status"], "done");
    assert_eq!(done["progress"], 1.0);
    assert_eq!(done["result"]["created"].as_array().unwrap().len(), 3);
    assert_eq!(api.state.session(&hash).unwrap().records.len(), 3);
}

#[tokio::test(flavor = "multi_thread")]
async fn unknown_session_job_and_detection_are_404() {
    let dir = tempfile::tempdir().unwrap();
    let api = Api::new(&dir.path().join("cache"));
    let hash = api.upload(&write_fixture(dir.path(), 1)).await;
    let zeros = "0".repeat(64);
    for (m, uri) in [
        (Method::GET, format!("/v1/sessions/{zeros}")),
        (Method::POST, format!("/v1/sessions/{zeros}/features")),
        (Method::GET, "/v1/jobs/999".to_string()),
        (Method::GET, "/v1/jobs/abc".to_string()),
        (Method::GET, format!("/v1/sessions/{hash}/detections/77")),
        (Method::GET, format!("/v1/sessions/{hash}/detections/x")),
        (Method::DELETE, format!("/v1/sessions/{hash}/detections/77")),
    ] {
        let (s, _) = api.json(m.clone(), &uri, None).await;
        assert_eq!(s, StatusCode::NOT_FOUND, "{m} {uri}");
    }
    let (s, _) =
        api.json(Method::PUT, &format!("/v1/sessions/{hash}/detections/77"), Some(r#"{"bbox": [1, 1, 5, 5]}"#)).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = api.json(Method::POST, &format!("/v1/sessions/{hash}/predict"), Some(r#"{"name": "nope"}"#)).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn edits_and_out_of_bounds_bbox() {
    let dir = tempfile::tempdir().unwrap();
    let api = Api::new(&dir.path().join("cache"));
    let hash = api.upload(&write_fixture(dir.path(), 1)).await;
    api.run_job(&format!("/v1/sessions/{hash}/detect"), TILING).await;
    let id = api.state.session(&hash).unwrap().records.keys().next().unwrap().0;
    let uri = format!("/v1/sessions/{hash}/detections/{id}");

    let (s, v) = api.json(Method::PUT, &uri, Some(r#"{"bbox": [150, 150, 170, 170]}"#)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
    let (s, v) = api.json(Method::PUT, &uri, Some(r#"{"bbox": [10, 10, 30, 30]}"#)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["record"]["bbox"], json!([10, 10, 30, 30]));
    assert_eq!(v["record"]["provenance"], "model");
    assert_eq!(v["record"]["detection_id"], id);

    let (s, v) = api
        .json(Method::POST, &format!("/v1/sessions/{hash}/detections"), Some(r#"{"frame_index": 0, "bbox": [0, 0, 8, 8]}"#))
        .await;
    assert_eq!(s, StatusCode::CREATED);
    let new_id = v["record"]["detection_id"].as_u64().unwrap();
    let (s, _) = api.json(Method::DELETE, &format!("/v1/sessions/{hash}/detections/{new_id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    let (s, _) = api.json(Method::GET, &format!("/v1/sessions/{hash}/detections/{new_id}"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = api.json(Method::PUT, &uri, Some(r#"{"box": [1, 1, 2, 2]}"#)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

struct Slow;

impl Detector for Slow {
    fn detect(&self, tile: &Frame) -> Result<Vec<ScoredBox>, BackendError> {
        std::thread::sleep(Duration::from_millis(300));
        ClassicalDetector.detect(tile)
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn concurrent_mutation_is_409() {
    let dir = tempfile::tempdir().unwrap();
    let api = Api::with_backends(
        &dir.path().join("cache"),
        Backends::from_parts(Arc::new(Slow), Arc::new(ClassicalSegmenter)),
    );
    let hash = api.upload(&write_fixture(dir.path(), 1)).await;
    let (s, v) = api.json(Method::POST, &format!("/v1/sessions/{hash}/detect"), Some(TILING)).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let (s, _) = api.json(Method::POST, &format!("/v1/sessions/{hash}/filter"), Some("{}")).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = api.json(Method::POST, &format!("/v1/sessions/{hash}/detect"), Some(TILING)).await;
    assert_eq!(s, StatusCode::CONFLICT);
    // Reads are not blocked.
    let (s, _) = api.call(Method::GET, &format!("/v1/sessions/{hash}"), None).await;
    assert_eq!(s, StatusCode::OK);
    api.wait_job(v["job_id"].as_u64().unwrap()).await;
    let (s, _) = api.json(Method::POST, &format!("/v1/sessions/{hash}/filter"), Some("{}")).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test(flavor = "multi_thread")]
async fn filter_hides_and_unhides() {
    let dir = tempfile::tempdir().unwrap();
    let api = Api::new(&dir.path().join("cache"));
    let hash = api.upload(&write_fixture(dir.path(), 1)).await;
    api.run_job(&format!("/v1/sessions/{hash}/detect"), TILING).await;
    let uri = format!("/v1/sessions/{hash}/filter");
    let (_, v) = api.json(Method::POST, &uri, Some(r#"{"min_diameter": 1000}"#)).await;
    assert_eq!(v["visible"], 0);
    let (_, v) = api.json(Method::POST, &uri, Some(r#"{"min_confidence": 0}"#)).await;
    assert_eq!(v["visible"], 3);
    let (s, _) = api.json(Method::POST, &uri, Some(r#"{"min_confidence": 2}"#)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test(flavor = "multi_thread")]
async fn annotate_train_predict_export() {
    let dir = tempfile::tempdir().unwrap();
    let api = Api::new(&dir.path().join("cache"));
    let hash = api.upload(&write_fixture(dir.path(), 5)).await;
    api.classical_pipeline(&hash).await;
    let base = format!("/v1/sessions/{hash}");

    let session = api.state.session(&hash).unwrap();
    for (i, id) in session.records.keys().enumerate() {
        let label = if session.records[id].bbox.center().x < 80.0 { "left" } else { "right" };
        let body = json!({
            "detection_id": id.0, "name": "side", "author": "t", "timestamp": i,
            "payload": {"kind": "classes", "value": [label]},
        });
        let (s, v) = api.json(Method::POST, &format!("{base}/annotations"), Some(&body.to_string())).await;
        assert_eq!(s, StatusCode::CREATED, "{v}");
    }
    let bad = json!({"detection_id": 1, "name": "box", "author": "t", "timestamp": 0,
        "payload": {"kind": "object", "value": [[0, 0, 500, 5]]}});
    let (s, _) = api.json(Method::POST, &format!("{base}/annotations"), Some(&bad.to_string())).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    let train = json!({
        "name": "side", "label": "ann:classes:side", "architecture": "knn", "task": "classification",
        "columns": ["area", "roundness"], "cv": {"k": 3, "stratified": true, "seed": 0},
    });
    let result = api.run_job(&format!("{base}/train"), &train.to_string()).await;
    assert_eq!(result["n_samples"], 15);
    assert_eq!(result["report"]["cv"]["per_fold"].as_array().map(Vec::len), Some(3), "{result}");

    let (s, v) = api.json(Method::POST, &format!("{base}/predict"), Some(r#"{"name": "side"}"#)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["predicted"], 15);

    let (s, csv) = api.call(Method::GET, &format!("{base}/export?format=csv"), None).await;
    assert_eq!(s, StatusCode::OK);
    let csv = String::from_utf8(csv).unwrap();
    assert!(csv.lines().next().unwrap().contains("pred:side"));
    assert_eq!(csv.lines().count(), 16);
    let (s, npy) = api.call(Method::GET, &format!("{base}/export?format=npy&frame=4"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(npy.starts_with(b"\x93NUMPY"));
    let (s, j) = api.call(Method::GET, &format!("{base}/export?format=json"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(serde_json::from_slice::<Value>(&j).is_ok());
    for q in ["format=xml", "format=npy&frame=9", "format=json&ids=a"] {
        let (s, _) = api.call(Method::GET, &format!("{base}/export?{q}"), None).await;
        assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{q}");
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn failed_training_job_reports_error() {
    let dir = tempfile::tempdir().unwrap();
    let api = Api::new(&dir.path().join("cache"));
    let hash = api.upload(&write_fixture(dir.path(), 1)).await;
    let body = json!({"name": "m", "label": "ann:classes:none", "architecture": "knn", "task": "classification"});
    let (s, v) = api.json(Method::POST, &format!("/v1/sessions/{hash}/train"), Some(&body.to_string())).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let done = api.wait_job(v["job_id"].as_u64().unwrap()).await;
    assert_eq!(done["status"], "failed");
    assert_eq!(done["error"]["status"], 422);
    let bad = json!({"name": "m", "label": "x", "architecture": "gp", "task": "classification"});
    let (s, _) = api.json(Method::POST, &format!("/v1/sessions/{hash}/train"), Some(&bad.to_string())).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test(flavor = "multi_thread")]
async fn reupload_after_restart_restores_from_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let path = write_fixture(dir.path(), 1);
    let before = {
        let api = Api::new(&cache);
        let hash = api.upload(&path).await;
        api.run_job(&format!("/v1/sessions/{hash}/detect"), TILING).await;
        api.state.session(&hash).unwrap()
    };
    let api = Api::new(&cache);
    let body = json!({ "path": path }).to_string();
    let (s, v) = api.json(Method::POST, "/v1/sessions", Some(&body)).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(v["restored"], true);
    assert_eq!(api.state.session(v["hash"].as_str().unwrap()).unwrap(), before);
}

#[tokio::test(flavor = "multi_thread")]
async fn random_call_sequences_preserve_integrity() {
    let dir = tempfile::tempdir().unwrap();
    let api = Api::new(&dir.path().join("cache"));
    let hash = api.upload(&write_fixture(dir.path(), 5)).await;
    api.classical_pipeline(&hash).await;
    fuzz(&api, &hash, 2024, 1000).await.unwrap();
}
