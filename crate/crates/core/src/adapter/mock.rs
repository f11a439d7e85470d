//! In-process mock sidecar replaying the classical backends, with switches
//! for the failure modes the client must handle.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::thread;
use std::time::Duration;

use super::protocol::{Capabilities, Op, Request, Response, RleMask, WireBox};
use crate::detection::classical_detect;
use crate::geometry::Rect;
use crate::imaging::BinaryMask;
use crate::segmentation::classical_segment;

pub const MOCK_MODEL: &str = "mock-classical";

#[derive(Debug, Clone, PartialEq)]
pub struct MockBehavior {
    pub capabilities: Capabilities,
    /// Sleep before every reply.
    pub delay_ms: u64,
    /// Append a box with confidence 1.7 to every detect reply.
    pub bad_confidence: bool,
    /// Omit the id from every reply.
    pub drop_id: bool,
    /// Reply to detect with the single box (1,1,5,5) @ 0.9.
    pub fixed_box: bool,
    /// Reply to segment with the prompt rect filled.
    pub echo_prompt: bool,
    /// Reply to segment with a mask one row taller than the crop.
    pub wrong_shape: bool,
    /// Write a line that is not JSON instead of a reply.
    pub garbage: bool,
    /// Restricts the switches above to these request ids.
    pub only_ids: Option<BTreeSet<u64>>,
}

impl Default for MockBehavior {
    fn default() -> Self {
        Self {
            capabilities: Capabilities::ALL,
            delay_ms: 0,
            bad_confidence: false,
            drop_id: false,
            fixed_box: false,
            echo_prompt: false,
            wrong_shape: false,
            garbage: false,
            only_ids: None,
        }
    }
}

impl MockBehavior {
    /// The behavior in effect for one request id.
    pub fn for_request(&self, id: u64) -> MockBehavior {
        match &self.only_ids {
            Some(ids) if !ids.contains(&id) => MockBehavior { capabilities: self.capabilities, ..Default::default() },
            _ => self.clone(),
        }
    }
}

pub fn serve_request(request: &Request, behavior: &MockBehavior) -> Response {
    let id = request.id;
    let behavior = &behavior.for_request(id);
    let mut response = match request.op {
        Op::Health => Response::health(id, behavior.capabilities, MOCK_MODEL),
        Op::Detect if !behavior.capabilities.detect => Response::failure(Some(id), "detect not supported"),
        Op::Segment if !behavior.capabilities.segment => Response::failure(Some(id), "segment not supported"),
        Op::Detect => detect(request, behavior),
        Op::Segment => segment(request, behavior),
    };
    if behavior.drop_id {
        response.id = None;
    }
    response
}

fn detect(request: &Request, behavior: &MockBehavior) -> Response {
    let frame = match request.image.as_ref().map(|i| i.decode()) {
        Some(Ok(f)) => f,
        Some(Err(e)) => return Response::failure(Some(request.id), e),
        None => return Response::failure(Some(request.id), "detect needs an image"),
    };
    let mut boxes: Vec<WireBox> = if behavior.fixed_box {
        vec![WireBox { rect: Rect::new(1, 1, 5, 5), confidence: 0.9 }]
    } else {
        classical_detect(&frame).into_iter().map(|b| WireBox { rect: b.rect, confidence: b.confidence }).collect()
    };
    if behavior.bad_confidence {
        boxes.push(WireBox { rect: Rect::new(0, 0, 1, 1), confidence: 1.7 });
    }
    Response::boxes(request.id, boxes)
}

fn segment(request: &Request, behavior: &MockBehavior) -> Response {
    let frame = match request.image.as_ref().map(|i| i.decode()) {
        Some(Ok(f)) => f,
        Some(Err(e)) => return Response::failure(Some(request.id), e),
        None => return Response::failure(Some(request.id), "segment needs an image"),
    };
    let Some(prompt) = request.prompt_rect else {
        return Response::failure(Some(request.id), "segment needs prompt_rect");
    };
    let (w, h) = (frame.width(), frame.height());
    let mask = if behavior.wrong_shape {
        BinaryMask::from_fn(w, h + 1, |_, _| true)
    } else if behavior.echo_prompt {
        let r = prompt.clamp_to(w, h);
        BinaryMask::from_fn(w, h, |x, y| r.contains_point(crate::geometry::Point::new(x as f64 + 0.5, y as f64 + 0.5)))
    } else {
        classical_segment(&frame, &prompt)
    };
    Response::mask(request.id, RleMask::encode(&mask))
}

/// Answers newline-delimited requests until the input closes. Unparseable
/// lines get an error reply without an id.
pub fn serve_stream<R: BufRead, W: Write>(reader: R, mut writer: W, behavior: &MockBehavior) -> std::io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (response, behavior) = match serde_json::from_str::<Request>(&line) {
            Ok(req) => (serve_request(&req, behavior), behavior.for_request(req.id)),
            Err(e) => (Response::failure(None, format!("malformed request: {e}")), behavior.clone()),
        };
        if behavior.delay_ms > 0 {
            thread::sleep(Duration::from_millis(behavior.delay_ms));
        }
        if behavior.garbage {
            writer.write_all(b"this is not json\n")?;
        } else {
            serde_json::to_writer(&mut writer, &response)?;
            writer.write_all(b"\n")?;
        }
        writer.flush()?;
    }
    Ok(())
}

/// A stream transport wired through OS pipes to a mock served on its own
/// thread. The mock exits when the transport is dropped.
pub fn in_process(behavior: MockBehavior, max_in_flight: usize) -> std::io::Result<super::StreamTransport> {
    let (req_rx, req_tx) = std::io::pipe()?;
    let (resp_rx, resp_tx) = std::io::pipe()?;
    thread::spawn(move || {
        let _ = serve_stream(std::io::BufReader::new(req_rx), resp_tx, &behavior);
    });
    Ok(super::StreamTransport::new(std::io::BufReader::new(resp_rx), req_tx, max_in_flight))
}
