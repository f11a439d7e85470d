//! Client for external detection/segmentation model processes.
//!
//! Messages are newline-delimited JSON over a subprocess's stdio, or one JSON
//! body per HTTP POST. See `docs/adapter-protocol.md`.

pub mod mock;
pub mod protocol;
pub mod transport;


use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{BackendError, Detector, ScoredBox};
use crate::geometry::Rect;
use crate::imaging::{BinaryMask, Frame};
use crate::segmentation::Segmenter;

pub use protocol::{Capabilities, ImagePayload, Op, Request, Response, RleMask, WireBox, PROTOCOL_VERSION};
pub use transport::{HttpTransport, StreamTransport, SubprocessTransport, Transport};

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("adapter timed out after {0:?}")]
    Timeout(Duration),
    #[error("adapter protocol error: {0}")]
    Protocol(String),
    #[error("adapter reported an error: {0}")]
    Remote(String),
    #[error("adapter transport failure: {0}")]
    Transport(String),
    #[error("endpoint lacks the {0} capability")]
    Capability(&'static str),
    #[error("invalid adapter endpoint: {0}")]
    InvalidEndpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    Stdio,
    Http,
}

fn default_timeout() -> f64 {
    30.0
}

fn default_in_flight() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterEndpoint {
    pub transport: TransportKind,
    /// Program and arguments for `stdio`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub command: Vec<String>,
    /// POST target for `http`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    pub capabilities: Capabilities,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

impl AdapterEndpoint {
    pub fn stdio(command: Vec<String>, capabilities: Capabilities) -> Self {
        Self {
            transport: TransportKind::Stdio,
            command,
            url: None,
            capabilities,
            timeout_secs: default_timeout(),
            max_in_flight: default_in_flight(),
        }
    }

    pub fn http(url: impl Into<String>, capabilities: Capabilities) -> Self {
        Self {
            transport: TransportKind::Http,
            command: Vec::new(),
            url: Some(url.into()),
            capabilities,
            timeout_secs: default_timeout(),
            max_in_flight: default_in_flight(),
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    pub fn validate(&self) -> Result<(), AdapterError> {
        let bad = |m: &str| Err(AdapterError::InvalidEndpoint(m.into()));
        if !self.capabilities.any() {
            return bad("at least one capability is required");
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return bad("timeout must be positive");
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be at least 1");
        }
        match self.transport {
            TransportKind::Stdio if self.command.is_empty() => bad("stdio transport needs a command"),
            TransportKind::Http if self.url.as_deref().is_none_or(str::is_empty) => bad("http transport needs a url"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub capabilities: Capabilities,
    pub model: String,
}

pub struct AdapterClient {
    transport: Arc<dyn Transport>,
    capabilities: Capabilities,
    timeout: Duration,
    next_id: Arc<AtomicU64>,
    dropped: AtomicU64,
}

impl std::fmt::Debug for AdapterClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdapterClient")
            .field("capabilities", &self.capabilities)
            .field("timeout", &self.timeout)
            .finish_non_exhaustive()
    }
}

impl AdapterClient {
    /// Validates the endpoint and opens its transport (spawning the process
    /// for `stdio`).
    pub fn connect(endpoint: &AdapterEndpoint) -> Result<Self, AdapterError> {
        endpoint.validate()?;
        let transport: Box<dyn Transport> = match endpoint.transport {
            TransportKind::Stdio => Box::new(SubprocessTransport::spawn(&endpoint.command, endpoint.max_in_flight)?),
            TransportKind::Http => Box::new(HttpTransport::new(
                endpoint.url.clone().unwrap_or_default(),
                endpoint.timeout(),
                endpoint.max_in_flight,
            )),
        };
        Ok(Self::with_transport(transport, endpoint.capabilities, endpoint.timeout()))
    }

    pub fn with_transport(transport: Box<dyn Transport>, capabilities: Capabilities, timeout: Duration) -> Self {
        Self {
            transport: Arc::from(transport),
            capabilities,
            timeout,
            next_id: Arc::new(AtomicU64::new(1)),
            dropped: AtomicU64::new(0),
        }
    }

    /// A second client over `other`'s connection, with `endpoint`'s
    /// capabilities and timeout. Request ids stay unique across both.
    pub fn connect_shared(other: &AdapterClient, endpoint: &AdapterEndpoint) -> Self {
        Self {
            transport: Arc::clone(&other.transport),
            capabilities: endpoint.capabilities,
            timeout: endpoint.timeout(),
            next_id: Arc::clone(&other.next_id),
            dropped: AtomicU64::new(0),
        }
    }

    /// Boxes discarded by validation since the client was created.
    pub fn dropped_boxes(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }

    fn call(&self, op: Op, image: Option<ImagePayload>, prompt_rect: Option<Rect>) -> Result<Response, AdapterError> {
        let request = Request { id: self.next_id.fetch_add(1, Ordering::Relaxed), op, image, prompt_rect };
        let response = self.transport.call(&request, self.timeout)?;
        if response.id != Some(request.id) {
            return Err(AdapterError::Protocol(format!(
                "reply id {:?} does not match request {}",
                response.id, request.id
            )));
        }
        response.validate().map_err(AdapterError::Protocol)?;
        if !response.ok {
            return Err(AdapterError::Remote(response.error.unwrap_or_default()));
        }
        Ok(response)
    }

    pub fn health(&self) -> Result<Health, AdapterError> {
        let r = self.call(Op::Health, None, None)?;
        match r.capabilities {
            Some(capabilities) => Ok(Health { capabilities, model: r.model.unwrap_or_default() }),
            None => Err(AdapterError::Protocol("health reply without capabilities".into())),
        }
    }

    /// Boxes in tile coordinates. Boxes that are empty, leave the tile or have
    /// a confidence outside [0, 1] are dropped and counted.
    pub fn detect(&self, tile: &Frame) -> Result<Vec<ScoredBox>, AdapterError> {
        if !self.capabilities.detect {
            return Err(AdapterError::Capability("detect"));
        }
        let r = self.call(Op::Detect, Some(ImagePayload::encode(tile)), None)?;
        let boxes = r.boxes.ok_or_else(|| AdapterError::Protocol("detect reply without boxes".into()))?;
        let total = boxes.len();
        let kept: Vec<ScoredBox> = boxes
            .into_iter()
            .filter(|b| {
                b.rect.is_valid() && b.rect.within(tile.width(), tile.height()) && (0.0..=1.0).contains(&b.confidence)
            })
            .map(|b| ScoredBox { rect: b.rect, confidence: b.confidence })
            .collect();
        let dropped = (total - kept.len()) as u64;
        if dropped > 0 {
            log::warn!("adapter returned {dropped} invalid boxes");
            self.dropped.fetch_add(dropped, Ordering::Relaxed);
        }
        Ok(kept)
    }

    /// Mask over the crop, prompted with `prompt` in crop coordinates.
    pub fn segment(&self, crop: &Frame, prompt: &Rect) -> Result<BinaryMask, AdapterError> {
        if !self.capabilities.segment {
            return Err(AdapterError::Capability("segment"));
        }
        let r = self.call(Op::Segment, Some(ImagePayload::encode(crop)), Some(*prompt))?;
        let rle = r.mask.ok_or_else(|| AdapterError::Protocol("segment reply without mask".into()))?;
        if rle.shape != [crop.height(), crop.width()] {
            return Err(AdapterError::Protocol(format!(
                "mask shape {:?} differs from crop shape [{}, {}]",
                rle.shape,
                crop.height(),
                crop.width()
            )));
        }
        rle.decode().map_err(AdapterError::Protocol)
    }
}

impl Detector for AdapterClient {
    fn detect(&self, tile: &Frame) -> Result<Vec<ScoredBox>, BackendError> {
        AdapterClient::detect(self, tile).map_err(Into::into)
    }
}

impl Segmenter for AdapterClient {
    fn segment(&self, crop: &Frame, prompt: &Rect) -> Result<BinaryMask, BackendError> {
        AdapterClient::segment(self, crop, prompt).map_err(Into::into)
    }
}
