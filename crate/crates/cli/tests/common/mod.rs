#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use orgapipe_cli::service::{self, AppState, Shared};
use orgapipe_core::pipeline::Backends;
use orgapipe_core::synthetic::{write_tiff, DiskTimelapse};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

pub fn write_fixture(dir: &Path, frames: usize) -> PathBuf {
    let stack = DiskTimelapse { frames, ..Default::default() }.stack();
    let path = dir.join(format!("disks_{frames}.tif"));
    write_tiff(&stack, &path).unwrap();
    path
}

/// Pipeline config for the disk fixture. The window covers the whole image so
/// no disk is split across tiles.
pub fn fixture_config(input: &Path, out: &Path) -> String {
    format!(
        r#"
[input]
path = {input:?}

[detection.tiling]
window_size = 256
downsampling_rates = [1]

[tracking]
search_radius = 20.0
memory = 0

[export]
dir = {out:?}
"#
    )
}

pub const TILING: &str = r#"{"tiling": {"window_size": 256, "downsampling_rates": [1]}}"#;

pub struct Api {
    pub state: Shared,
    pub router: Router,
}

impl Api {
    pub fn new(cache: &Path) -> Self {
        Self::with_backends(cache, Backends::classical())
    }

    pub fn with_backends(cache: &Path, backends: Backends) -> Self {
        let state = AppState::new(cache, backends);
        let router = service::router(state.clone());
        Self { state, router }
    }

    pub async fn call(&self, method: Method, uri: &str, body: Option<&str>) -> (StatusCode, Vec<u8>) {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .header("content-type", "application/json")
            .body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty))
            .unwrap();
        let resp = self.router.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
        (status, bytes.to_vec())
    }

    pub async fn json(&self, method: Method, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
        let (s, b) = self.call(method, uri, body).await;
        (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
    }

    pub async fn upload(&self, path: &Path) -> String {
        let body = serde_json::json!({ "path": path }).to_string();
        let (s, v) = self.json(Method::POST, "/v1/sessions", Some(&body)).await;
        assert!(s == StatusCode::CREATED || s == StatusCode::OK, "{s} {v}");
        v["hash"].as_str().unwrap().to_string()
    }

    /// Polls a job until it finishes; returns its final view.
    pub async fn wait_job(&self, id: u64) -> Value {
        for _ in 0..2000 {
            let (s, v) = self.json(Method::GET, &format!("/v1/jobs/{id}"), None).await;
            assert_eq!(s, StatusCode::OK);
            if v["status"] == "done" || v["status"] == "failed" {
                return v;
            }
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
        panic!("job {id} did not finish");
    }

    /// Starts a job endpoint and waits for it; panics unless it succeeds.
    pub async fn run_job(&self, uri: &str, body: &str) -> Value {
        let (s, v) = self.json(Method::POST, uri, Some(body)).await;
        assert_eq!(s, StatusCode::ACCEPTED, "{v}");
        let done = self.wait_job(v["job_id"].as_u64().unwrap()).await;
        assert_eq!(done["status"], "done", "{done}");
        done["result"].clone()
    }

    /// The call sequence equivalent to a full classical `orgapipe run` of
    /// [`fixture_config`], without export.
    pub async fn classical_pipeline(&self, hash: &str) {
        let base = format!("/v1/sessions/{hash}");
        let (s, _) = self.json(Method::POST, &format!("{base}/roi"), Some(r#"{"roi": null}"#)).await;
        assert_eq!(s, StatusCode::OK);
        self.run_job(&format!("{base}/detect"), TILING).await;
        let (s, _) = self.json(Method::POST, &format!("{base}/filter"), Some("{}")).await;
        assert_eq!(s, StatusCode::OK);
        let (s, v) =
            self.json(Method::POST, &format!("{base}/track"), Some(r#"{"search_radius": 20.0, "memory": 0}"#)).await;
        assert_eq!(s, StatusCode::OK, "{v}");
        self.run_job(&format!("{base}/segment"), "{}").await;
        let (s, v) = self.json(Method::POST, &format!("{base}/features"), None).await;
        assert_eq!(s, StatusCode::OK, "{v}");
    }
}

/// One random API call. Returns the job id when a job was started.
pub async fn random_call(api: &Api, hash: &str, rng: &mut ChaCha8Rng) -> (StatusCode, Option<u64>) {
    let base = format!("/v1/sessions/{hash}");
    let ids: Vec<u64> = api.state.session(hash).unwrap().records.keys().map(|d| d.0).collect();
    let id = if !ids.is_empty() && rng.gen_bool(0.8) { ids[rng.gen_range(0..ids.len())] } else { rng.gen_range(0..200) };
    let coord = |rng: &mut ChaCha8Rng| rng.gen_range(-20i64..190);
    let (method, uri, body): (Method, String, Option<String>) = match rng.gen_range(0..17) {
        0 => (Method::POST, format!("{base}/detect"), Some(TILING.into())),
        1 => (
            Method::POST,
            format!("{base}/filter"),
            Some(json!({"min_confidence": rng.gen_range(-0.2..1.2), "min_diameter": rng.gen_range(0.0..40.0)}).to_string()),
        ),
        2 => (
            Method::POST,
            format!("{base}/track"),
            Some(json!({"search_radius": rng.gen_range(-5.0..40.0), "memory": rng.gen_range(0..3), "fill_gaps": rng.gen_bool(0.5)}).to_string()),
        ),
        3 => (Method::POST, format!("{base}/segment"), Some("{}".into())),
        4 => (Method::POST, format!("{base}/features"), None),
        5 => (Method::GET, format!("{base}/detections/{id}"), None),
        6 => {
            let (x, y) = (coord(rng), coord(rng));
            let bbox = [x, y, x + rng.gen_range(-3..40), y + rng.gen_range(-3..40)];
            (Method::PUT, format!("{base}/detections/{id}"), Some(json!({ "bbox": bbox }).to_string()))
        }
        7 => (Method::DELETE, format!("{base}/detections/{id}"), None),
        8 => {
            let (x, y) = (coord(rng), coord(rng));
            let body = json!({"frame_index": rng.gen_range(0..6), "bbox": [x, y, x + 12, y + 12]});
            (Method::POST, format!("{base}/detections"), Some(body.to_string()))
        }
        9 => {
            let payload = match rng.gen_range(0..5) {
                0 => json!({"kind": "number", "value": rng.gen_range(-5.0..5.0)}),
                1 => json!({"kind": "text", "value": "note"}),
                2 => json!({"kind": "classes", "value": [if rng.gen_bool(0.5) { "a" } else { "b" }]}),
                3 => json!({"kind": "object", "value": [[coord(rng), coord(rng), 100, 100]]}),
                _ => json!({"kind": "ruler", "value": [[[0.0, 0.0], [3.0, 4.0]]]}),
            };
            let body = json!({"detection_id": id, "name": "f", "author": "fuzz", "timestamp": 0, "payload": payload});
            (Method::POST, format!("{base}/annotations"), Some(body.to_string()))
        }
        10 => {
            let body = json!({"name": "m", "label": "ann:classes:f", "architecture": "knn", "task": "classification",
                "cv": {"k": 2, "stratified": false, "seed": 1}});
            (Method::POST, format!("{base}/train"), Some(body.to_string()))
        }
        11 => (Method::POST, format!("{base}/predict"), Some(r#"{"name": "m"}"#.into())),
        12 => {
            let fmt = ["csv", "json", "npy", "bogus"][rng.gen_range(0..4)];
            (Method::GET, format!("{base}/export?format={fmt}&frame={}", rng.gen_range(0..6)), None)
        }
        13 => (Method::GET, base.clone(), None),
        14 => {
            let roi = if rng.gen_bool(0.5) { json!(null) } else { json!([coord(rng), coord(rng), 150, 150]) };
            (Method::POST, format!("{base}/roi"), Some(json!({ "roi": roi }).to_string()))
        }
        15 => (Method::POST, format!("{base}/filter"), Some("{\"min_confidence\": ".into())),
        _ => (Method::GET, format!("/v1/jobs/{}", rng.gen_range(0..50)), None),
    };
    let (s, v) = api.json(method, &uri, body.as_deref()).await;
    let job = (s == StatusCode::ACCEPTED).then(|| v["job_id"].as_u64().unwrap());
    (s, job)
}

/// Issues `calls` random API calls against a session, checking after each
/// one that no call returned 5xx and the session keeps referential integrity.
pub async fn fuzz(api: &Api, hash: &str, seed: u64, calls: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jobs = Vec::new();
    for i in 0..calls {
        let (s, job) = random_call(api, hash, &mut rng).await;
        if s.is_server_error() {
            return Err(format!("call {i} returned {s}"));
        }
        jobs.extend(job);
        if rng.gen_bool(0.3) {
            if let Some(j) = jobs.last() {
                api.wait_job(*j).await;
            }
        }
        let violations = api.state.session(hash).unwrap().integrity_violations();
        if !violations.is_empty() {
            return Err(format!("after call {i}: {violations:?}"));
        }
    }
    for j in jobs {
        let v = api.wait_job(j).await;
        if v["status"] == "failed" && v["error"]["status"].as_u64().is_none_or(|s| s >= 500) {
            return Err(format!("job {j} failed with {v}"));
        }
    }
    match api.state.session(hash).unwrap().integrity_violations() {
        v if v.is_empty() => Ok(()),
        v => Err(format!("at end: {v:?}")),
    }
}
