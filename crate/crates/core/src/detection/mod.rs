//! Tiled, multi-scale bounding-box detection over a pluggable detector,
//! global non-maximum suppression, ROI restriction and record filtering.

mod classical;
mod nms;
mod tiling;

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Rect;
use crate::imaging::{downsample_frame, Frame, Roi};

pub use crate::geometry::iou;
pub use classical::{classical_detect, ClassicalDetector, MIN_COMPONENT_AREA};
pub use nms::nms;
pub use tiling::tile_positions;

/// Error type returned by detector and segmenter backends.
pub type BackendError = Box<dyn std::error::Error + Send + Sync>;

/// Sliding windows overlap by half their size.
pub const OVERLAP_FRACTION: f64 = 0.5;

/// Session-unique identifier of one detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DetectionId(pub u64);

impl fmt::Display for DetectionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Model,
    Manual,
    GapFill,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Model => "model",
            Provenance::Manual => "manual",
            Provenance::GapFill => "gap_fill",
        }
    }
}

/// One organoid in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub detection_id: DetectionId,
    pub frame_index: usize,
    pub bbox: Rect,
    pub confidence: f64,
    pub provenance: Provenance,
    #[serde(default)]
    pub track_id: Option<u64>,
}

impl DetectionRecord {
    /// Mean of the bbox side lengths.
    pub fn diameter(&self) -> f64 {
        (self.bbox.width() + self.bbox.height()) as f64 / 2.0
    }
}

/// A box reported by a detector, in the coordinates of the tile it was given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub rect: Rect,
    pub confidence: f64,
}

/// A source of bounding boxes for one image tile.
pub trait Detector: Send + Sync {
    fn detect(&self, tile: &Frame) -> Result<Vec<ScoredBox>, BackendError>;
}

impl<D: Detector + ?Sized> Detector for &D {
    fn detect(&self, tile: &Frame) -> Result<Vec<ScoredBox>, BackendError> {
        (**self).detect(tile)
    }
}

impl<D: Detector + ?Sized> Detector for std::sync::Arc<D> {
    fn detect(&self, tile: &Frame) -> Result<Vec<ScoredBox>, BackendError> {
        (**self).detect(tile)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TilingConfig {
    pub window_size: usize,
    pub downsampling_rates: Vec<usize>,
}

impl Default for TilingConfig {
    fn default() -> Self {
        Self { window_size: 512, downsampling_rates: vec![1] }
    }
}

impl TilingConfig {
    pub fn validate(&self) -> Result<(), DetectionError> {
        if self.window_size < 16 {
            return Err(DetectionError::InvalidConfig(format!("window_size {} < 16", self.window_size)));
        }
        if self.downsampling_rates.is_empty() || self.downsampling_rates.contains(&0) {
            return Err(DetectionError::InvalidConfig("downsampling rates must be non-empty and >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmsConfig {
    pub iou_threshold: f64,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self { iou_threshold: 0.5 }
    }
}

impl NmsConfig {
    pub fn validate(&self) -> Result<(), DetectionError> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(DetectionError::InvalidConfig(format!("iou_threshold {} not in (0, 1]", self.iou_threshold)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub min_confidence: f64,
    pub min_diameter: f64,
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), DetectionError> {
        if !(0.0..=1.0).contains(&self.min_confidence) || !(self.min_diameter >= 0.0) {
            return Err(DetectionError::InvalidConfig(format!("invalid filter {self:?}")));
        }
        Ok(())
    }

    pub fn accepts(&self, record: &DetectionRecord) -> bool {
        record.confidence >= self.min_confidence && record.diameter() >= self.min_diameter
    }
}

#[derive(Debug, Error)]
pub enum DetectionError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("all {tiles} tiles failed; first error: {first}")]
    AllTilesFailed { tiles: usize, first: TileError },
    #[error("unknown detection id {0}")]
    UnknownId(DetectionId),
    #[error("bbox {bbox:?} outside frame {width}x{height}")]
    OutOfBounds { bbox: Rect, width: usize, height: usize },
    #[error("frame index {0} out of range")]
    UnknownFrame(usize),
    #[error(transparent)]
    Imaging(#[from] crate::imaging::ImagingError),
}

/// A detector failure on one tile; the remaining tiles still run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Error)]
#[error("detector failed on tile {tile_index} (rate {rate}, origin {origin:?}): {message}")]
pub struct TileError {
    pub rate: usize,
    pub tile_index: usize,
    pub origin: (usize, usize),
    pub message: String,
}

/// Hands out fresh, strictly increasing detection IDs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IdAllocator {
    next: u64,
}

impl Default for IdAllocator {
    fn default() -> Self {
        Self { next: 1 }
    }
}

impl IdAllocator {
    pub fn starting_at(next: u64) -> Self {
        Self { next: next.max(1) }
    }

    pub fn next_id(&mut self) -> DetectionId {
        let id = DetectionId(self.next);
        self.next += 1;
        id
    }

    pub fn peek(&self) -> u64 {
        self.next
    }

    /// Makes sure future IDs exceed `id`.
    pub fn observe(&mut self, id: DetectionId) {
        self.next = self.next.max(id.0 + 1);
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameDetections {
    pub records: Vec<DetectionRecord>,
    pub tile_errors: Vec<TileError>,
}

/// Tiles of one downsampled frame: `(tile_index, origin, rect)` in downsampled pixels.
fn tiles_for(width: usize, height: usize, window: usize) -> Vec<(usize, (usize, usize), Rect)> {
    let xs = tile_positions(width, window);
    let ys = tile_positions(height, window);
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            let rect = Rect::new(x as i64, y as i64, (x + window).min(width) as i64, (y + window).min(height) as i64);
            out.push((out.len(), (x, y), rect));
        }
    }
    out
}

/// Candidate boxes of one frame in full-resolution coordinates, pooled in
/// `(rate, tile_index, within-tile)` order, before NMS.
pub fn pooled_candidates(
    frame: &Frame,
    detector: &dyn Detector,
    tiling: &TilingConfig,
) -> Result<(Vec<ScoredBox>, Vec<TileError>, usize), DetectionError> {
    tiling.validate()?;
    let mut jobs = Vec::new();
    for &rate in &tiling.downsampling_rates {
        let scaled = downsample_frame(frame, rate)?;
        for (tile_index, origin, rect) in tiles_for(scaled.width(), scaled.height(), tiling.window_size) {
            let tile = scaled.crop(&rect)?;
            jobs.push((rate, tile_index, origin, tile));
        }
    }
    let results: Vec<_> = jobs.par_iter().map(|(_, _, _, tile)| detector.detect(tile)).collect();

    let (fw, fh) = (frame.width(), frame.height());
    let mut boxes = Vec::new();
    let mut errors = Vec::new();
    for ((rate, tile_index, origin, _), result) in jobs.iter().zip(results) {
        match result {
            Ok(found) => {
                for b in found {
                    let rect = b.rect.translate(origin.0 as i64, origin.1 as i64).scale(*rate as i64).clamp_to(fw, fh);
                    if rect.is_valid() {
                        boxes.push(ScoredBox { rect, confidence: b.confidence });
                    }
                }
            }
            Err(e) => errors.push(TileError {
                rate: *rate,
                tile_index: *tile_index,
                origin: *origin,
                message: e.to_string(),
            }),
        }
    }
    Ok((boxes, errors, jobs.len()))
}

/// Runs the detector over every tile at every downsampling rate, merges the
/// results with NMS, drops boxes whose center lies outside `roi`, and assigns
/// fresh IDs in kept order.
///
/// Tile failures are collected in [`FrameDetections::tile_errors`]; only when
/// every tile fails is an error returned.
pub fn detect_frame(
    frame: &Frame,
    frame_index: usize,
    detector: &dyn Detector,
    tiling: &TilingConfig,
    nms_cfg: &NmsConfig,
    roi: Option<&Roi>,
    ids: &mut IdAllocator,
) -> Result<FrameDetections, DetectionError> {
    nms_cfg.validate()?;
    let (boxes, tile_errors, tiles) = pooled_candidates(frame, detector, tiling)?;
    if tiles > 0 && tile_errors.len() == tiles {
        let first = tile_errors[0].clone();
        return Err(DetectionError::AllTilesFailed { tiles, first });
    }
    let records = nms(&boxes, nms_cfg.iou_threshold)
        .into_iter()
        .map(|i| boxes[i])
        .filter(|b| roi.is_none_or(|r| r.rect.contains_point(b.rect.center())))
        .map(|b| DetectionRecord {
            detection_id: ids.next_id(),
            frame_index,
            bbox: b.rect,
            confidence: b.confidence.clamp(0.0, 1.0),
            provenance: Provenance::Model,
            track_id: None,
        })
        .collect();
    Ok(FrameDetections { records, tile_errors })
}

/// Records passing both thresholds; `diameter` is the mean bbox side length.
pub fn filter_detections<'a>(records: &'a [DetectionRecord], cfg: &FilterConfig) -> Vec<&'a DetectionRecord> {
    records.iter().filter(|r| cfg.accepts(r)).collect()
}

/// A manual correction to the detection set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EditOp {
    Add { frame_index: usize, bbox: Rect },
    Modify { detection_id: DetectionId, bbox: Rect },
    Delete { detection_id: DetectionId },
}

pub fn check_bbox(bbox: &Rect, width: usize, height: usize) -> Result<(), DetectionError> {
    if !bbox.within(width, height) {
        return Err(DetectionError::OutOfBounds { bbox: *bbox, width, height });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disks(w: usize, h: usize, centers: &[(f64, f64)], r: f64) -> Frame {
        let mut px = vec![0.1f32; w * h];
        for y in 0..h {
            for x in 0..w {
                let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
                if centers.iter().any(|&(a, b)| (cx - a).powi(2) + (cy - b).powi(2) <= r * r) {
                    px[y * w + x] = 0.8;
                }
            }
        }
        Frame::gray(w, h, px).unwrap()
    }

    const CENTERS: [(f64, f64); 3] = [(80.0, 40.0), (100.0, 100.0), (70.0, 90.0)];

    fn run(rates: Vec<usize>, roi: Option<Roi>) -> FrameDetections {
        let frame = disks(128, 128, &CENTERS, 10.0);
        let tiling = TilingConfig { window_size: 128, downsampling_rates: rates };
        let mut ids = IdAllocator::default();
        detect_frame(&frame, 0, &ClassicalDetector, &tiling, &NmsConfig::default(), roi.as_ref(), &mut ids).unwrap()
    }

    #[test]
    fn three_disks_three_records() {
        let out = run(vec![1], None);
        assert_eq!(out.records.len(), 3);
        for (cx, cy) in CENTERS {
            let hits = out.records.iter().filter(|r| r.bbox.contains_point(crate::Point::new(cx, cy))).count();
            assert_eq!(hits, 1);
        }
        let ids: Vec<_> = out.records.iter().map(|r| r.detection_id.0).collect();
        assert_eq!(ids, vec![1, 2, 3]);
    }

    #[test]
    fn roi_on_the_empty_half() {
        let roi = Roi::new(Rect::new(0, 0, 50, 128), 128, 128).unwrap();
        assert!(run(vec![1], Some(roi)).records.is_empty());
    }

    #[test]
    fn multiscale_duplicates_are_suppressed() {
        let out = run(vec![1, 2], None);
        assert_eq!(out.records.len(), 3);
    }

    struct Failing;
    impl Detector for Failing {
        fn detect(&self, _: &Frame) -> Result<Vec<ScoredBox>, BackendError> {
            Err("boom".into())
        }
    }

    #[test]
    fn all_tiles_failing_is_an_error() {
        let frame = disks(64, 64, &[], 1.0);
        let tiling = TilingConfig { window_size: 32, downsampling_rates: vec![1] };
        let err = detect_frame(&frame, 0, &Failing, &tiling, &NmsConfig::default(), None, &mut IdAllocator::default())
            .unwrap_err();
        assert!(matches!(err, DetectionError::AllTilesFailed { tiles: 9, .. }));
    }

    #[test]
    fn tiled_boxes_map_back_to_frame_coordinates() {
        struct Fixed;
        impl Detector for Fixed {
            fn detect(&self, _: &Frame) -> Result<Vec<ScoredBox>, BackendError> {
                Ok(vec![ScoredBox { rect: Rect::new(1, 1, 5, 5), confidence: 0.9 }])
            }
        }
        let frame = disks(64, 32, &[], 1.0);
        let tiling = TilingConfig { window_size: 32, downsampling_rates: vec![2] };
        let (boxes, errs, tiles) = pooled_candidates(&frame, &Fixed, &tiling).unwrap();
        // downsampled 32x16 fits in one clipped window
        assert_eq!((tiles, errs.len()), (1, 0));
        assert_eq!(boxes[0].rect, Rect::new(2, 2, 10, 10));
    }

    fn rec(conf: f64, bbox: Rect) -> DetectionRecord {
        DetectionRecord {
            detection_id: DetectionId(1),
            frame_index: 0,
            bbox,
            confidence: conf,
            provenance: Provenance::Model,
            track_id: None,
        }
    }

    #[test]
    fn filter_by_confidence() {
        let recs = [rec(0.3, Rect::new(0, 0, 10, 10)), rec(0.6, Rect::new(0, 0, 10, 10))];
        let kept = filter_detections(&recs, &FilterConfig { min_confidence: 0.5, min_diameter: 0.0 });
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].confidence, 0.6);
    }

    #[test]
    fn filter_diameter_is_inclusive() {
        let recs = [rec(1.0, Rect::new(0, 0, 10, 30))];
        assert_eq!(filter_detections(&recs, &FilterConfig { min_confidence: 0.0, min_diameter: 20.0 }).len(), 1);
        assert_eq!(filter_detections(&recs, &FilterConfig { min_confidence: 0.0, min_diameter: 20.5 }).len(), 0);
    }

    #[test]
    fn zero_filter_keeps_everything() {
        let recs = [rec(0.0, Rect::new(0, 0, 1, 1)), rec(0.2, Rect::new(0, 0, 3, 1))];
        assert_eq!(filter_detections(&recs, &FilterConfig::default()).len(), 2);
    }

    #[test]
    fn tiling_validation() {
        assert!(TilingConfig { window_size: 8, downsampling_rates: vec![1] }.validate().is_err());
        assert!(TilingConfig { window_size: 16, downsampling_rates: vec![] }.validate().is_err());
        assert!(TilingConfig { window_size: 16, downsampling_rates: vec![0] }.validate().is_err());
        assert!(NmsConfig { iou_threshold: 0.0 }.validate().is_err());
    }
}
