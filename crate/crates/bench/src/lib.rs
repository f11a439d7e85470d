//! Inputs shared by the criterion benchmarks in `benches/`.

use orgapipe_core::detection::{ClassicalDetector, NmsConfig, ScoredBox, TilingConfig};
use orgapipe_core::segmentation::{ClassicalSegmenter, SegmentConfig};
use orgapipe_core::synthetic::DiskTimelapse;
use orgapipe_core::tracking::TrackingConfig;
use orgapipe_core::{DetectionId, DetectionRecord, ImageStack, Provenance, Rect, Session};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` random boxes in a 512x512 field with overlapping clusters.
pub fn random_boxes(n: usize, seed: u64) -> Vec<ScoredBox> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let (x, y) = (rng.gen_range(0..480), rng.gen_range(0..480));
            let (w, h) = (rng.gen_range(8..40), rng.gen_range(8..40));
            ScoredBox { rect: Rect::new(x, y, x + w, y + h), confidence: rng.gen() }
        })
        .collect()
}

/// `frames` frames of `objects` drifting detections each.
pub fn drifting_detections(objects: usize, frames: usize, seed: u64) -> Vec<Vec<DetectionRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<(i64, i64)> = (0..objects).map(|_| (rng.gen_range(20..480), rng.gen_range(20..480))).collect();
    let mut id = 0;
    (0..frames)
        .map(|t| {
            pos.iter_mut()
                .map(|p| {
                    p.0 += rng.gen_range(-3..=3);
                    p.1 += rng.gen_range(-3..=3);
                    id += 1;
                    DetectionRecord {
                        detection_id: DetectionId(id),
                        frame_index: t,
                        bbox: Rect::new(p.0 - 6, p.1 - 6, p.0 + 6, p.1 + 6),
                        confidence: 1.0,
                        provenance: Provenance::Model,
                        track_id: None,
                    }
                })
                .collect()
        })
        .collect()
}

pub fn whole_image_tiling() -> TilingConfig {
    TilingConfig { window_size: 256, downsampling_rates: vec![1] }
}

/// Runs detection through features on the disk timelapse.
pub fn classical_session(stack: &ImageStack) -> Session {
    let mut s = Session::new(stack, &[]);
    s.detect(stack, &ClassicalDetector, &whole_image_tiling(), &NmsConfig::default(), None).expect("detect");
    s.track(&TrackingConfig::default()).expect("track");
    s.segment(stack, &[], &ClassicalSegmenter, &SegmentConfig::default()).expect("segment");
    s.compute_features(stack, &[]).expect("features");
    s
}

pub fn disk_stack() -> ImageStack {
    DiskTimelapse::default().stack()
}
