//! Mock model sidecar speaking adapter protocol v1 over stdio or HTTP.
//! It replays the classical backends, with switches for failure modes.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::Router;
use clap::Args;
use orgapipe_core::adapter::mock::{serve_request, serve_stream, MockBehavior};
use orgapipe_core::adapter::{Capabilities, Request, Response as WireResponse};

#[derive(Debug, Clone, Args)]
pub struct SidecarArgs {
    /// Serve HTTP on this address instead of stdio.
    #[arg(long, value_name = "ADDR")]
    pub http: Option<std::net::SocketAddr>,
    #[arg(long)]
    pub no_detect: bool,
    #[arg(long)]
    pub no_segment: bool,
    #[arg(long, default_value_t = 0)]
    pub delay_ms: u64,
    /// Append a box with confidence 1.7 to detect replies.
    #[arg(long)]
    pub bad_confidence: bool,
    /// Omit the id from replies.
    #[arg(long)]
    pub drop_id: bool,
    /// Answer detect with the box (1,1,5,5) @ 0.9.
    #[arg(long)]
    pub fixed_box: bool,
    /// Answer segment with the prompt rect filled.
    #[arg(long)]
    pub echo_prompt: bool,
    /// Answer segment with a mask one row taller than the crop.
    #[arg(long)]
    pub wrong_shape: bool,
    /// Answer with a line that is not JSON.
    #[arg(long)]
    pub garbage: bool,
    /// Apply the fault switches only to these request ids.
    #[arg(long, value_delimiter = ',')]
    pub only_ids: Vec<u64>,
}

impl SidecarArgs {
    pub fn behavior(&self) -> MockBehavior {
        MockBehavior {
            capabilities: Capabilities { detect: !self.no_detect, segment: !self.no_segment },
            delay_ms: self.delay_ms,
            bad_confidence: self.bad_confidence,
            drop_id: self.drop_id,
            fixed_box: self.fixed_box,
            echo_prompt: self.echo_prompt,
            wrong_shape: self.wrong_shape,
            garbage: self.garbage,
            only_ids: (!self.only_ids.is_empty()).then(|| self.only_ids.iter().copied().collect::<BTreeSet<_>>()),
        }
    }
}

/// HTTP mode: every POST to `/` or `/v1/infer` carries one request.
pub fn http_router(behavior: MockBehavior) -> Router {
    Router::new().route("/", post(infer)).route("/v1/infer", post(infer)).with_state(Arc::new(behavior))
}

async fn infer(State(behavior): State<Arc<MockBehavior>>, body: Bytes) -> Response {
    let (reply, effective) = match serde_json::from_slice::<Request>(&body) {
        Ok(req) => (serve_request(&req, &behavior), behavior.for_request(req.id)),
        Err(e) => {
            let r = WireResponse::failure(None, format!("malformed request: {e}"));
            return (StatusCode::BAD_REQUEST, axum::Json(r)).into_response();
        }
    };
    if effective.delay_ms > 0 {
        tokio::time::sleep(Duration::from_millis(effective.delay_ms)).await;
    }
    if effective.garbage {
        return (StatusCode::OK, "this is not json").into_response();
    }
    axum::Json(reply).into_response()
}

pub fn run(args: &SidecarArgs) -> anyhow::Result<()> {
    let behavior = args.behavior();
    match args.http {
        None => {
            let stdin = std::io::stdin().lock();
            let stdout = std::io::stdout().lock();
            serve_stream(stdin, stdout, &behavior)?;
        }
        Some(addr) => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                log::info!("mock sidecar listening on {}", listener.local_addr()?);
                axum::serve(listener, http_router(behavior)).await
            })?;
        }
    }
    Ok(())
}
