//! HTTP service over the session store, versioned under `/v1`.
//!
//! Detect, segment and train run as jobs polled through `/v1/jobs/{id}`;
//! everything else answers synchronously. One mutating call per session at a
//! time: a second one gets 409 while the first (or its job) is running.

mod error;
mod jobs;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use orgapipe_core::annotations::Annotation;
use orgapipe_core::detection::{DetectionId, EditOp, FilterConfig, NmsConfig, TilingConfig};
use orgapipe_core::imaging::{load_stack, load_stack_from_bytes, ImageStack, LayoutHint, SignalChannel};
use orgapipe_core::ml::{CvConfig, ModelSpec};
use orgapipe_core::pipeline::Backends;
use orgapipe_core::segmentation::SegmentConfig;
use orgapipe_core::store::{export_csv, export_json, export_npy, Cache, DetectReport, Session, StoreError};
use orgapipe_core::tracking::TrackingConfig;
use orgapipe_core::Rect;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

pub use error::ApiError;
pub use jobs::{JobStatus, JobView};
use jobs::Jobs;

pub struct AppState {
    cache: Cache,
    backends: Backends,
    sessions: RwLock<HashMap<String, Arc<Slot>>>,
    jobs: Arc<Jobs>,
}

pub type Shared = Arc<AppState>;

struct Slot {
    hash: String,
    stack: ImageStack,
    channels: Vec<SignalChannel>,
    session: RwLock<Session>,
    busy: AtomicBool,
}

/// Exclusive right to mutate one session; released on drop.
struct WriteGuard(Arc<Slot>);

impl Drop for WriteGuard {
    fn drop(&mut self) {
        self.0.busy.store(false, Ordering::Release);
    }
}

impl Slot {
    fn begin(self: &Arc<Self>) -> Result<WriteGuard, ApiError> {
        self.busy
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .map_err(|_| ApiError::busy())?;
        Ok(WriteGuard(Arc::clone(self)))
    }

    fn snapshot(&self) -> Session {
        self.session.read().unwrap().clone()
    }
}

impl WriteGuard {
    /// Applies `f` to a copy of the session, persists it, then publishes it.
    /// A failing `f` leaves the session untouched.
    fn apply<T>(&self, cache: &Cache, f: impl FnOnce(&mut Session) -> Result<T, StoreError>) -> Result<T, ApiError> {
        let mut s = self.0.snapshot();
        let out = f(&mut s)?;
        cache.save(&s)?;
        *self.0.session.write().unwrap() = s;
        Ok(out)
    }
}

impl AppState {
    pub fn new(cache_root: impl Into<PathBuf>, backends: Backends) -> Shared {
        Arc::new(AppState {
            cache: Cache::new(cache_root),
            backends,
            sessions: RwLock::new(HashMap::new()),
            jobs: Arc::new(Jobs::default()),
        })
    }

    fn slot(&self, hash: &str) -> Result<Arc<Slot>, ApiError> {
        self.sessions
            .read()
            .unwrap()
            .get(hash)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session {hash}")))
    }

    /// Current session state, if loaded.
    pub fn session(&self, hash: &str) -> Option<Session> {
        self.slot(hash).ok().map(|s| s.snapshot())
    }

    pub fn job(&self, id: u64) -> Option<JobView> {
        self.jobs.get(id)
    }
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/healthz", get(healthz))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{hash}", get(get_session))
        .route("/v1/sessions/{hash}/roi", post(set_roi))
        .route("/v1/sessions/{hash}/detect", post(detect))
        .route("/v1/sessions/{hash}/filter", post(filter))
        .route("/v1/sessions/{hash}/track", post(track))
        .route("/v1/sessions/{hash}/segment", post(segment))
        .route("/v1/sessions/{hash}/features", post(features))
        .route("/v1/sessions/{hash}/detections", post(add_detection))
        .route(
            "/v1/sessions/{hash}/detections/{id}",
            get(get_detection).put(put_detection).delete(delete_detection),
        )
        .route("/v1/sessions/{hash}/annotations", post(annotate))
        .route("/v1/sessions/{hash}/train", post(train))
        .route("/v1/sessions/{hash}/predict", post(predict))
        .route("/v1/sessions/{hash}/export", get(export))
        .route("/v1/jobs/{id}", get(get_job))
        .with_state(state)
}

pub async fn serve(addr: std::net::SocketAddr, state: Shared) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

/// Parses a JSON body; an empty body reads as `{}`. Any failure is a 422.
fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let bytes: &[u8] = if body.iter().all(u8::is_ascii_whitespace) { b"{}" } else { body };
    serde_json::from_slice(bytes).map_err(|e| ApiError::invalid(format!("invalid payload: {e}")))
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(e.to_string()))?
}

fn detection_id(raw: &str) -> Result<DetectionId, ApiError> {
    raw.parse::<u64>().map(DetectionId).map_err(|_| ApiError::not_found(format!("unknown detection id {raw}")))
}

fn accepted(job: u64) -> Response {
    (StatusCode::ACCEPTED, Json(json!({"job_id": job}))).into_response()
}

async fn healthz() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

#[derive(Deserialize)]
struct ImageSource {
    path: Option<PathBuf>,
    image_base64: Option<String>,
}

impl ImageSource {
    fn load(&self, layout: Option<LayoutHint>, name: &str) -> Result<ImageStack, ApiError> {
        let bad = |e: &dyn std::fmt::Display| ApiError::invalid(format!("{name}: {e}"));
        match (&self.path, &self.image_base64) {
            (Some(p), None) => load_stack(p, layout).map_err(|e| bad(&e)),
            (None, Some(b)) => {
                let bytes = STANDARD.decode(b).map_err(|e| bad(&e))?;
                let s = load_stack_from_bytes(&bytes, layout).map_err(|e| bad(&e))?;
                ImageStack::new(s.frames().to_vec(), None, format!("upload:{name}")).map_err(|e| bad(&e))
            }
            _ => Err(ApiError::invalid(format!("{name}: give exactly one of path or image_base64"))),
        }
    }
}

#[derive(Deserialize)]
struct ChannelUpload {
    name: String,
    #[serde(flatten)]
    source: ImageSource,
}

#[derive(Deserialize)]
struct UploadBody {
    #[serde(flatten)]
    source: ImageSource,
    pixel_scale: Option<f64>,
    layout: Option<LayoutHint>,
    #[serde(default)]
    channels: Vec<ChannelUpload>,
}

async fn create_session(State(st): State<Shared>, body: Bytes) -> Result<Response, ApiError> {
    let body: UploadBody = parse(&body)?;
    blocking(move || {
        if body.pixel_scale.is_some_and(|s| !(s.is_finite() && s > 0.0)) {
            return Err(ApiError::invalid("pixel_scale must be positive"));
        }
        let stack = body.source.load(body.layout, "image")?.with_pixel_scale(body.pixel_scale);
        let mut channels = Vec::new();
        for c in &body.channels {
            let s = c.source.load(body.layout, &c.name)?;
            channels.push(SignalChannel::new(&c.name, s, &stack).map_err(|e| ApiError::invalid(e.to_string()))?);
        }
        let hash = stack.content_hash().to_hex();
        if let Ok(slot) = st.slot(&hash) {
            let image = slot.session.read().unwrap().image.clone();
            return Ok((StatusCode::OK, Json(json!({"hash": hash, "image": image, "restored": true}))).into_response());
        }
        let fresh = Session::new(&stack, &channels);
        let cached = st
            .cache
            .load(&stack.content_hash())
            .filter(|c| c.image == fresh.image && c.signal_channels == fresh.signal_channels);
        let restored = cached.is_some();
        let session = cached.unwrap_or(fresh);
        if !restored {
            st.cache.save(&session)?;
        }
        let image = session.image.clone();
        let slot = Arc::new(Slot {
            hash: hash.clone(),
            stack,
            channels,
            session: RwLock::new(session),
            busy: AtomicBool::new(false),
        });
        st.sessions.write().unwrap().entry(hash.clone()).or_insert(slot);
        Ok((StatusCode::CREATED, Json(json!({"hash": hash, "image": image, "restored": restored}))).into_response())
    })
    .await
}

async fn get_session(State(st): State<Shared>, Path(hash): Path<String>) -> Result<Response, ApiError> {
    let slot = st.slot(&hash)?;
    let bytes = serde_json::to_vec(&slot.snapshot()).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RoiBody {
    roi: Option<Rect>,
}

async fn set_roi(State(st): State<Shared>, Path(hash): Path<String>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let slot = st.slot(&hash)?;
    let body: RoiBody = parse(&body)?;
    let guard = slot.begin()?;
    guard.apply(&st.cache, |s| s.set_roi(body.roi))?;
    Ok(Json(json!({"roi": body.roi})))
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct DetectBody {
    tiling: TilingConfig,
    nms: NmsConfig,
    frames: Option<Vec<usize>>,
}

async fn detect(State(st): State<Shared>, Path(hash): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let slot = st.slot(&hash)?;
    let body: DetectBody = parse(&body)?;
    body.tiling.validate().map_err(|e| ApiError::invalid(e.to_string()))?;
    body.nms.validate().map_err(|e| ApiError::invalid(e.to_string()))?;
    let frames = body.frames.clone().unwrap_or_else(|| (0..slot.stack.len()).collect());
    if let Some(f) = frames.iter().find(|f| **f >= slot.stack.len()) {
        return Err(ApiError::invalid(format!("frame index {f} out of range")));
    }
    let guard = slot.begin()?;
    let state = Arc::clone(&st);
    let job = st.jobs.spawn("detect", &hash, move |handle| {
        let slot = &guard.0;
        let mut s = slot.snapshot();
        let mut report = DetectReport::default();
        for (i, f) in frames.iter().enumerate() {
            let r = s.detect(&slot.stack, state.backends.detector(), &body.tiling, &body.nms, Some(&[*f]))?;
            report.created.extend(r.created);
            report.removed.extend(r.removed);
            report.tile_errors.extend(r.tile_errors);
            handle.progress((i + 1) as f64 / frames.len() as f64);
        }
        state.cache.save(&s)?;
        *slot.session.write().unwrap() = s;
        Ok(serde_json::to_value(report).expect("report serializes"))
    });
    Ok(accepted(job))
}

async fn filter(State(st): State<Shared>, Path(hash): Path<String>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let slot = st.slot(&hash)?;
    let cfg: FilterConfig = parse(&body)?;
    let guard = slot.begin()?;
    let visible = guard.apply(&st.cache, |s| s.apply_filter(cfg))?;
    Ok(Json(json!({"visible": visible, "filter": cfg})))
}

async fn track(State(st): State<Shared>, Path(hash): Path<String>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let slot = st.slot(&hash)?;
    let cfg: TrackingConfig = parse(&body)?;
    let guard = slot.begin()?;
    let cache_st = Arc::clone(&st);
    let report = blocking(move || guard.apply(&cache_st.cache, |s| s.track(&cfg))).await?;
    Ok(Json(serde_json::to_value(report).expect("report serializes")))
}

async fn segment(State(st): State<Shared>, Path(hash): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let slot = st.slot(&hash)?;
    let cfg: SegmentConfig = parse(&body)?;
    let guard = slot.begin()?;
    let state = Arc::clone(&st);
    let job = st.jobs.spawn("segment", &hash, move |_| {
        let slot = Arc::clone(&guard.0);
        let report = guard
            .apply(&state.cache, |s| s.segment(&slot.stack, &slot.channels, state.backends.segmenter(), &cfg))?;
        Ok(serde_json::to_value(report).expect("report serializes"))
    });
    Ok(accepted(job))
}

async fn features(State(st): State<Shared>, Path(hash): Path<String>) -> Result<Json<Value>, ApiError> {
    let slot = st.slot(&hash)?;
    let guard = slot.begin()?;
    let state = Arc::clone(&st);
    let report = blocking(move || {
        let slot = Arc::clone(&guard.0);
        guard.apply(&state.cache, |s| s.compute_features(&slot.stack, &slot.channels))
    })
    .await?;
    Ok(Json(serde_json::to_value(report).expect("report serializes")))
}

fn detection_view(s: &Session, id: DetectionId) -> Result<Value, ApiError> {
    let record = s.record(id)?;
    let masks: Vec<&str> = s.masks.keys().filter(|(d, _)| *d == id).map(|(_, c)| c.as_str()).collect();
    let annotations: Vec<&Annotation> = s.annotations.for_detection(id).collect();
    Ok(json!({
        "record": record,
        "visible": s.is_visible(id),
        "features": s.features.row(id).cloned().unwrap_or_default(),
        "annotations": annotations,
        "masks": masks,
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewDetection {
    frame_index: usize,
    bbox: Rect,
}

async fn add_detection(State(st): State<Shared>, Path(hash): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let slot = st.slot(&hash)?;
    let body: NewDetection = parse(&body)?;
    let guard = slot.begin()?;
    let id = guard.apply(&st.cache, |s| s.edit(EditOp::Add { frame_index: body.frame_index, bbox: body.bbox }))?;
    let view = detection_view(&slot.snapshot(), id)?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn get_detection(
    State(st): State<Shared>,
    Path((hash, id)): Path<(String, String)>,
) -> Result<Json<Value>, ApiError> {
    let slot = st.slot(&hash)?;
    let id = detection_id(&id)?;
    Ok(Json(detection_view(&slot.snapshot(), id)?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModifyDetection {
    bbox: Rect,
}

async fn put_detection(
    State(st): State<Shared>,
    Path((hash, id)): Path<(String, String)>,
    body: Bytes,
) -> Result<Json<Value>, ApiError> {
    let slot = st.slot(&hash)?;
    let id = detection_id(&id)?;
    let body: ModifyDetection = parse(&body)?;
    let guard = slot.begin()?;
    guard.apply(&st.cache, |s| s.edit(EditOp::Modify { detection_id: id, bbox: body.bbox }))?;
    Ok(Json(detection_view(&slot.snapshot(), id)?))
}

async fn delete_detection(
    State(st): State<Shared>,
    Path((hash, id)): Path<(String, String)>,
) -> Result<Json<Value>, ApiError> {
    let slot = st.slot(&hash)?;
    let id = detection_id(&id)?;
    let guard = slot.begin()?;
    let record = guard.apply(&st.cache, |s| s.delete(id))?;
    Ok(Json(json!({"deleted": record})))
}

async fn annotate(State(st): State<Shared>, Path(hash): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let slot = st.slot(&hash)?;
    let a: Annotation = parse(&body)?;
    let guard = slot.begin()?;
    let column = a.column();
    guard.apply(&st.cache, |s| s.put_annotation(a))?;
    Ok((StatusCode::CREATED, Json(json!({"column": column}))).into_response())
}

#[derive(Deserialize)]
struct TrainBody {
    name: String,
    label: String,
    #[serde(flatten)]
    spec: ModelSpec,
    columns: Option<Vec<String>>,
    cv: Option<CvConfig>,
}

async fn train(State(st): State<Shared>, Path(hash): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let slot = st.slot(&hash)?;
    let body: TrainBody = parse(&body)?;
    body.spec.resolved().map_err(|e| ApiError::invalid(e.to_string()))?;
    let guard = slot.begin()?;
    let state = Arc::clone(&st);
    let job = st.jobs.spawn("train", &hash, move |_| {
        let summary = guard.apply(&state.cache, |s| {
            s.train(&body.name, &body.spec, body.columns.as_deref(), &body.label, body.cv.as_ref())
        })?;
        Ok(serde_json::to_value(summary).expect("summary serializes"))
    });
    Ok(accepted(job))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictBody {
    name: String,
}

async fn predict(State(st): State<Shared>, Path(hash): Path<String>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let slot = st.slot(&hash)?;
    let body: PredictBody = parse(&body)?;
    let guard = slot.begin()?;
    let n = guard.apply(&st.cache, |s| s.predict(&body.name))?;
    Ok(Json(json!({"column": format!("pred:{}", body.name), "predicted": n})))
}

async fn export(
    State(st): State<Shared>,
    Path(hash): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    let slot = st.slot(&hash)?;
    let session = slot.snapshot();
    let flag = |k: &str| q.get(k).is_some_and(|v| v == "true" || v == "1");
    match q.get("format").map(String::as_str).unwrap_or("json") {
        "csv" => Ok(([(header::CONTENT_TYPE, "text/csv")], export_csv(&session, flag("include_hidden"))).into_response()),
        "json" => {
            let ids: Option<Vec<DetectionId>> = match q.get("ids") {
                Some(list) => Some(
                    list.split(',')
                        .filter(|s| !s.is_empty())
                        .map(|s| s.trim().parse().map(DetectionId).map_err(|_| ApiError::invalid(format!("bad id {s:?}"))))
                        .collect::<Result<_, _>>()?,
                ),
                None => None,
            };
            let bytes = export_json(&session, ids.as_deref())?;
            Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
        }
        "npy" => {
            let frame = match q.get("frame") {
                Some(f) => f.parse().map_err(|_| ApiError::invalid(format!("bad frame {f:?}")))?,
                None => 0,
            };
            if frame >= session.image.frames {
                return Err(ApiError::invalid(format!("frame {frame} out of range")));
            }
            let bytes = export_npy(&session, frame)?;
            Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response())
        }
        other => Err(ApiError::invalid(format!("unknown export format {other:?}"))),
    }
}

async fn get_job(State(st): State<Shared>, Path(id): Path<String>) -> Result<Json<JobView>, ApiError> {
    id.parse::<u64>()
        .ok()
        .and_then(|id| st.jobs.get(id))
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("unknown job {id}")))
}

impl std::fmt::Debug for Slot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Slot").field("hash", &self.hash).finish_non_exhaustive()
    }
}
