//! Protocol v1 message types and payload codecs.

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::geometry::Rect;
use crate::imaging::{BinaryMask, Frame};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DTYPE_F32: &str = "f32";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Detect,
    Segment,
    Health,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    #[serde(default)]
    pub detect: bool,
    #[serde(default)]
    pub segment: bool,
}

impl Capabilities {
    pub const ALL: Capabilities = Capabilities { detect: true, segment: true };

    pub fn any(&self) -> bool {
        self.detect || self.segment
    }
}

/// Raw pixels: row-major `[height, width, channels]`, little-endian f32, base64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePayload {
    pub shape: [usize; 3],
    pub dtype: String,
    pub data: String,
}

impl ImagePayload {
    pub fn encode(frame: &Frame) -> Self {
        let mut bytes = Vec::with_capacity(frame.pixels().len() * 4);
        for v in frame.pixels() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let (h, w, c) = frame.shape();
        Self { shape: [h, w, c], dtype: DTYPE_F32.into(), data: STANDARD.encode(bytes) }
    }

    pub fn decode(&self) -> Result<Frame, String> {
        if self.dtype != DTYPE_F32 {
            return Err(format!("unsupported dtype {:?}", self.dtype));
        }
        let bytes = STANDARD.decode(&self.data).map_err(|e| format!("bad base64: {e}"))?;
        let [h, w, c] = self.shape;
        let n = h.checked_mul(w).and_then(|v| v.checked_mul(c)).ok_or("shape overflows")?;
        if bytes.len() != n * 4 {
            return Err(format!("image data has {} bytes, shape needs {}", bytes.len(), n * 4));
        }
        let pixels = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        Frame::new(w, h, c, pixels, 8).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub op: Op,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ImagePayload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_rect: Option<Rect>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireBox {
    pub rect: Rect,
    pub confidence: f64,
}

/// Binary mask as alternating run lengths over the row-major pixels,
/// starting with a run of zeros (possibly of length 0).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub shape: [usize; 2],
    pub counts: Vec<u64>,
}

impl RleMask {
    pub fn encode(mask: &BinaryMask) -> Self {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u64;
        for &v in &mask.data {
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
        counts.push(run);
        Self { shape: [mask.height, mask.width], counts }
    }

    pub fn decode(&self) -> Result<BinaryMask, String> {
        let [h, w] = self.shape;
        let n = h.checked_mul(w).ok_or("shape overflows")?;
        let total = self.counts.iter().try_fold(0u64, |a, &c| a.checked_add(c)).ok_or("run lengths overflow")?;
        if total != n as u64 {
            return Err(format!("run lengths sum to {total}, shape has {n} pixels"));
        }
        let mut mask = BinaryMask::new(w, h);
        let mut pos = 0usize;
        for (i, &c) in self.counts.iter().enumerate() {
            let end = pos + c as usize;
            if i % 2 == 1 {
                mask.data[pos..end].fill(true);
            }
            pos = end;
        }
        Ok(mask)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Response {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boxes: Option<Vec<WireBox>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<RleMask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capabilities: Option<Capabilities>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Response {
    pub fn failure(id: Option<u64>, message: impl Into<String>) -> Self {
        Self { id, ok: false, error: Some(message.into()), ..Default::default() }
    }

    pub fn boxes(id: u64, boxes: Vec<WireBox>) -> Self {
        Self { id: Some(id), ok: true, boxes: Some(boxes), ..Default::default() }
    }

    pub fn mask(id: u64, mask: RleMask) -> Self {
        Self { id: Some(id), ok: true, mask: Some(mask), ..Default::default() }
    }

    pub fn health(id: u64, capabilities: Capabilities, model: impl Into<String>) -> Self {
        Self { id: Some(id), ok: true, capabilities: Some(capabilities), model: Some(model.into()), ..Default::default() }
    }

    /// Structural check: `ok` replies carry exactly one payload and no error,
    /// failures carry an error and no payload.
    pub fn validate(&self) -> Result<(), String> {
        let payloads = [self.boxes.is_some(), self.mask.is_some(), self.capabilities.is_some()]
            .iter()
            .filter(|p| **p)
            .count();
        match (self.ok, self.error.is_some(), payloads) {
            (true, false, 1) => Ok(()),
            (true, true, _) => Err("ok reply carries an error".into()),
            (true, false, n) => Err(format!("ok reply carries {n} payloads, expected 1")),
            (false, true, 0) => Ok(()),
            (false, false, _) => Err("failed reply has no error message".into()),
            (false, true, _) => Err("failed reply carries a payload".into()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rle_runs_set_pixels_three_and_four() {
        let rle = RleMask { shape: [1, 6], counts: vec![3, 2, 1] };
        let m = rle.decode().unwrap();
        let set: Vec<usize> = (0..6).filter(|&i| m.data[i]).collect();
        assert_eq!(set, vec![3, 4]);
    }

    #[test]
    fn rle_rejects_wrong_total() {
        assert!(RleMask { shape: [2, 3], counts: vec![3, 2] }.decode().is_err());
        assert!(RleMask { shape: [2, 3], counts: vec![3, 2, 2] }.decode().is_err());
    }

    #[test]
    fn rle_leading_foreground_starts_with_zero_run() {
        let m = BinaryMask::from_fn(3, 1, |x, _| x == 0);
        assert_eq!(RleMask::encode(&m).counts, vec![0, 1, 2]);
    }

    #[test]
    fn image_payload_round_trip() {
        let f = Frame::new(3, 2, 3, (0..18).map(|i| i as f32 / 17.0).collect(), 16).unwrap();
        let p = ImagePayload::encode(&f);
        assert_eq!(p.shape, [2, 3, 3]);
        assert_eq!(p.decode().unwrap().pixels(), f.pixels());
    }

    #[test]
    fn image_payload_checks_length_and_dtype() {
        let f = Frame::gray(2, 2, vec![0.5; 4]).unwrap();
        let mut p = ImagePayload::encode(&f);
        p.shape = [2, 3, 1];
        assert!(p.decode().is_err());
        let mut p = ImagePayload::encode(&f);
        p.dtype = "u8".into();
        assert!(p.decode().is_err());
    }

    #[test]
    fn response_payload_rule() {
        assert!(Response::boxes(1, vec![]).validate().is_ok());
        assert!(Response::failure(Some(1), "x").validate().is_ok());
        let mut both = Response::boxes(1, vec![]);
        both.error = Some("x".into());
        assert!(both.validate().is_err());
        let mut two = Response::boxes(1, vec![]);
        two.mask = Some(RleMask { shape: [1, 1], counts: vec![1] });
        assert!(two.validate().is_err());
        assert!(Response { id: Some(1), ok: true, ..Default::default() }.validate().is_err());
        assert!(Response { id: Some(1), ok: false, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn wire_shapes() {
        let req = Request { id: 4, op: Op::Health, image: None, prompt_rect: None };
        assert_eq!(serde_json::to_string(&req).unwrap(), r#"{"id":4,"op":"health"}"#);
        let resp = Response::boxes(4, vec![WireBox { rect: Rect::new(1, 1, 5, 5), confidence: 0.9 }]);
        assert_eq!(
            serde_json::to_string(&resp).unwrap(),
            r#"{"id":4,"ok":true,"boxes":[{"rect":[1,1,5,5],"confidence":0.9}]}"#
        );
    }

    proptest! {
        #[test]
        fn rle_round_trip(w in 1usize..12, h in 1usize..12, bits in proptest::collection::vec(any::<bool>(), 144)) {
            let m = BinaryMask::from_fn(w, h, |x, y| bits[y * 12 + x]);
            let rle = RleMask::encode(&m);
            prop_assert_eq!(rle.counts.iter().sum::<u64>(), (w * h) as u64);
            prop_assert!(rle.counts.iter().skip(1).all(|&c| c > 0));
            prop_assert_eq!(rle.decode().unwrap(), m);
        }
    }
}
