//! Bbox-prompted instance segmentation stored as polygon contours.

mod classical;
mod simplify;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{BackendError, DetectionId, DetectionRecord};
use crate::geometry::{Point, Rect};
use crate::imaging::{rasterize_polygon, trace_contour, BinaryMask, Frame, ImageStack, SignalChannel};

pub use classical::{classical_segment, ClassicalSegmenter};
pub use simplify::simplify_polygon;

/// Channel name of the primary image.
pub const PRIMARY_CHANNEL: &str = "primary";

/// Closed instance contour of one detection in one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonMask {
    pub detection_id: DetectionId,
    pub frame_index: usize,
    pub channel_name: String,
    pub vertices: Vec<Point>,
}

impl PolygonMask {
    /// Integer bounding box of the vertices (pixel-aligned, half-open).
    pub fn bounds(&self) -> Rect {
        let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.vertices {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        Rect::new(x0.floor() as i64, y0.floor() as i64, x1.ceil() as i64, y1.ceil() as i64)
    }

    /// Pixel-center rasterization over the polygon's own bounds.
    pub fn rasterize(&self) -> Result<BinaryMask, crate::imaging::ImagingError> {
        rasterize_polygon(&self.vertices, &self.bounds())
    }
}

/// A model that turns a crop plus prompt rectangle into a binary mask of the crop's shape.
pub trait Segmenter: Send + Sync {
    fn segment(&self, crop: &Frame, prompt: &Rect) -> Result<BinaryMask, BackendError>;
}

impl<S: Segmenter + ?Sized> Segmenter for &S {
    fn segment(&self, crop: &Frame, prompt: &Rect) -> Result<BinaryMask, BackendError> {
        (**self).segment(crop, prompt)
    }
}

impl<S: Segmenter + ?Sized> Segmenter for std::sync::Arc<S> {
    fn segment(&self, crop: &Frame, prompt: &Rect) -> Result<BinaryMask, BackendError> {
        (**self).segment(crop, prompt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentConfig {
    /// Fraction of the bbox width/height added on each side before prompting.
    pub padding_fraction: f64,
    /// Douglas–Peucker tolerance in pixels; 0 keeps the raw pixel-edge contour.
    pub simplify_tolerance: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self { padding_fraction: 0.1, simplify_tolerance: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IssueKind {
    /// The segmenter returned no foreground; the mask is absent.
    EmptyMask,
    /// The segmenter failed on this record; processing continued.
    Failed { message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationIssue {
    pub detection_id: DetectionId,
    pub channel_name: String,
    #[serde(flatten)]
    pub kind: IssueKind,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SegmentationOutput {
    pub masks: Vec<PolygonMask>,
    pub issues: Vec<SegmentationIssue>,
}

/// Bbox padded by `fraction` of its size per side, clamped to the frame.
pub fn padded_rect(bbox: &Rect, fraction: f64, width: usize, height: usize) -> Rect {
    let px = (bbox.width() as f64 * fraction).round() as i64;
    let py = (bbox.height() as f64 * fraction).round() as i64;
    Rect::new(bbox.x_min - px, bbox.y_min - py, bbox.x_max + px, bbox.y_max + py).clamp_to(width, height)
}

fn segment_one(
    record: &DetectionRecord,
    frame: &Frame,
    channel: &str,
    segmenter: &dyn Segmenter,
    cfg: &SegmentConfig,
) -> Result<PolygonMask, IssueKind> {
    let failed = |message: String| IssueKind::Failed { message };
    let region = padded_rect(&record.bbox, cfg.padding_fraction, frame.width(), frame.height());
    let crop = frame.crop(&region).map_err(|e| failed(e.to_string()))?;
    let prompt = record.bbox.translate(-region.x_min, -region.y_min);
    let mask = segmenter.segment(&crop, &prompt).map_err(|e| failed(e.to_string()))?;
    if (mask.width, mask.height) != (crop.width(), crop.height()) {
        return Err(failed(format!(
            "mask shape {}x{} differs from crop shape {}x{}",
            mask.width,
            mask.height,
            crop.width(),
            crop.height()
        )));
    }
    if mask.count() == 0 {
        return Err(IssueKind::EmptyMask);
    }
    let contour = trace_contour(&mask.with_origin(region.x_min, region.y_min)).map_err(|e| failed(e.to_string()))?;
    Ok(PolygonMask {
        detection_id: record.detection_id,
        frame_index: record.frame_index,
        channel_name: channel.to_string(),
        vertices: simplify_polygon(&contour, cfg.simplify_tolerance),
    })
}

/// Segments every record in the primary stack and in each signal channel,
/// prompting with the same bbox. Failures and empty outputs are reported as
/// issues and leave the mask absent.
pub fn segment(
    records: &[DetectionRecord],
    stack: &ImageStack,
    segmenter: &dyn Segmenter,
    channels: &[SignalChannel],
    cfg: &SegmentConfig,
) -> SegmentationOutput {
    let mut jobs: Vec<(&DetectionRecord, &str, &ImageStack)> = Vec::new();
    for r in records {
        jobs.push((r, PRIMARY_CHANNEL, stack));
        for c in channels {
            jobs.push((r, c.name.as_str(), &c.stack));
        }
    }
    let results: Vec<_> = jobs
        .par_iter()
        .map(|(r, name, s)| match s.frame(r.frame_index) {
            Some(frame) => segment_one(r, frame, name, segmenter, cfg),
            None => Err(IssueKind::Failed { message: format!("frame {} out of range", r.frame_index) }),
        })
        .collect();
    let mut out = SegmentationOutput::default();
    for ((r, name, _), res) in jobs.iter().zip(results) {
        match res {
            Ok(mask) => out.masks.push(mask),
            Err(kind) => out.issues.push(SegmentationIssue {
                detection_id: r.detection_id,
                channel_name: name.to_string(),
                kind,
            }),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::Provenance;

    fn disk_stack(r: f64) -> ImageStack {
        let (w, h) = (160, 160);
        let mut px = vec![0.1f32; w * h];
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f64 + 0.5 - 80.0, y as f64 + 0.5 - 80.0);
                if dx * dx + dy * dy <= r * r {
                    px[y * w + x] = 0.8;
                }
            }
        }
        ImageStack::new(vec![Frame::gray(w, h, px).unwrap()], None, "disk").unwrap()
    }

    fn record(bbox: Rect) -> DetectionRecord {
        DetectionRecord {
            detection_id: DetectionId(1),
            frame_index: 0,
            bbox,
            confidence: 1.0,
            provenance: Provenance::Manual,
            track_id: None,
        }
    }

    #[test]
    fn disk_area_close_to_analytic() {
        let r = 30.0;
        let stack = disk_stack(r);
        let out = segment(&[record(Rect::new(50, 50, 110, 110))], &stack, &ClassicalSegmenter, &[], &SegmentConfig::default());
        assert!(out.issues.is_empty());
        assert_eq!(out.masks.len(), 1);
        let area = out.masks[0].rasterize().unwrap().count() as f64;
        let expected = std::f64::consts::PI * r * r;
        assert!((area - expected).abs() / expected <= 0.05, "{area} vs {expected}");
    }

    #[test]
    fn one_mask_per_channel() {
        let stack = disk_stack(20.0);
        let channels = vec![
            SignalChannel::new("gfp", disk_stack(20.0), &stack).unwrap(),
            SignalChannel::new("pi", disk_stack(15.0), &stack).unwrap(),
        ];
        let out = segment(&[record(Rect::new(58, 58, 102, 102))], &stack, &ClassicalSegmenter, &channels, &SegmentConfig::default());
        let names: Vec<_> = out.masks.iter().map(|m| m.channel_name.as_str()).collect();
        assert_eq!(names, vec!["primary", "gfp", "pi"]);
    }

    #[test]
    fn background_bbox_is_flagged_not_fatal() {
        let stack = disk_stack(10.0);
        let out = segment(&[record(Rect::new(0, 0, 20, 20))], &stack, &ClassicalSegmenter, &[], &SegmentConfig::default());
        assert!(out.masks.is_empty());
        assert_eq!(out.issues[0].kind, IssueKind::EmptyMask);
    }

    #[test]
    fn mask_stays_inside_padded_bbox() {
        let stack = disk_stack(30.0);
        let bbox = Rect::new(50, 50, 110, 110);
        let out = segment(&[record(bbox)], &stack, &ClassicalSegmenter, &[], &SegmentConfig::default());
        let region = padded_rect(&bbox, 0.1, 160, 160);
        let m = out.masks[0].rasterize().unwrap();
        assert!(m.pixels().all(|(x, y)| region.contains_point(Point::new(x as f64 + 0.5, y as f64 + 0.5))));
    }

    #[test]
    fn deterministic() {
        let stack = disk_stack(25.0);
        let recs = [record(Rect::new(50, 50, 110, 110))];
        let a = segment(&recs, &stack, &ClassicalSegmenter, &[], &SegmentConfig::default());
        let b = segment(&recs, &stack, &ClassicalSegmenter, &[], &SegmentConfig::default());
        assert_eq!(a, b);
    }

    struct WrongShape;
    impl Segmenter for WrongShape {
        fn segment(&self, _: &Frame, _: &Rect) -> Result<BinaryMask, BackendError> {
            Ok(BinaryMask::new(1, 1))
        }
    }

    #[test]
    fn wrong_shape_is_reported() {
        let stack = disk_stack(25.0);
        let out = segment(&[record(Rect::new(50, 50, 110, 110))], &stack, &WrongShape, &[], &SegmentConfig::default());
        assert!(matches!(out.issues[0].kind, IssueKind::Failed { .. }));
    }

    #[test]
    fn padding_is_clamped() {
        assert_eq!(padded_rect(&Rect::new(0, 0, 20, 10), 0.1, 100, 100), Rect::new(0, 0, 22, 11));
    }
}
