//! Frame-to-frame linking of detections into tracks, and gap filling.
//!
//! Each frame is matched against the tracks that are still alive (seen within
//! the last `memory + 1` frames) by an optimal one-to-one assignment on
//! squared center distance, with pairs farther apart than the search radius
//! forbidden. Detection IDs never change; tracks get their own IDs.

mod assignment;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{DetectionId, DetectionRecord, IdAllocator, Provenance};

pub use assignment::solve as solve_assignment;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingConfig {
    pub search_radius: f64,
    pub memory: usize,
    pub fill_gaps: bool,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self { search_radius: 20.0, memory: 0, fill_gaps: false }
    }
}

#[derive(Debug, Error)]
pub enum TrackingError {
    #[error("search radius must be positive, got {0}")]
    InvalidRadius(f64),
}

impl TrackingConfig {
    pub fn validate(&self) -> Result<(), TrackingError> {
        if !(self.search_radius > 0.0 && self.search_radius.is_finite()) {
            return Err(TrackingError::InvalidRadius(self.search_radius));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackEntry {
    pub frame_index: usize,
    pub detection_id: DetectionId,
    pub synthetic: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackAssignment {
    pub detection_to_track: BTreeMap<DetectionId, u64>,
    pub tracks: BTreeMap<u64, Vec<TrackEntry>>,
}

impl TrackAssignment {
    pub fn track_of(&self, id: DetectionId) -> Option<u64> {
        self.detection_to_track.get(&id).copied()
    }

    /// Removes a detection from its track; empty tracks disappear.
    pub fn remove_detection(&mut self, id: DetectionId) {
        if let Some(track) = self.detection_to_track.remove(&id) {
            if let Some(entries) = self.tracks.get_mut(&track) {
                entries.retain(|e| e.detection_id != id);
                if entries.is_empty() {
                    self.tracks.remove(&track);
                }
            }
        }
    }

    /// Rebuilds the assignment from `track_id` fields of records.
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a DetectionRecord>) -> Self {
        let mut out = TrackAssignment::default();
        for r in records {
            if let Some(t) = r.track_id {
                out.detection_to_track.insert(r.detection_id, t);
                out.tracks.entry(t).or_default().push(TrackEntry {
                    frame_index: r.frame_index,
                    detection_id: r.detection_id,
                    synthetic: r.provenance == Provenance::GapFill,
                });
            }
        }
        for entries in out.tracks.values_mut() {
            entries.sort_by_key(|e| (e.frame_index, e.detection_id));
        }
        out
    }
}

/// Per-frame summary of one linking step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkStep {
    pub frame_index: usize,
    /// `(track_id, detection_id)` pairs matched to an existing track.
    pub matched: Vec<(u64, DetectionId)>,
    /// Sum of squared center distances of the matched pairs, times 4
    /// (centers are half-integers, so this is exact).
    pub cost_quarter_px2: i64,
}

impl LinkStep {
    pub fn cost(&self) -> f64 {
        self.cost_quarter_px2 as f64 / 4.0
    }
}

struct ActiveTrack {
    id: u64,
    center2: (i64, i64),
    last_frame: usize,
}

/// Links per-frame detection lists (`frames[t]` holds frame `t`) into tracks.
pub fn link(frames: &[Vec<DetectionRecord>], cfg: &TrackingConfig) -> TrackAssignment {
    link_detailed(frames, cfg).0
}

pub fn link_detailed(frames: &[Vec<DetectionRecord>], cfg: &TrackingConfig) -> (TrackAssignment, Vec<LinkStep>) {
    // compare doubled distances against the doubled radius
    let radius2_sq = 4.0 * cfg.search_radius * cfg.search_radius;
    let mut out = TrackAssignment::default();
    let mut steps = Vec::new();
    let mut active: Vec<ActiveTrack> = Vec::new();
    let mut next_track = 1u64;

    for (t, dets) in frames.iter().enumerate() {
        active.retain(|a| t - a.last_frame - 1 <= cfg.memory);
        let mut dets: Vec<&DetectionRecord> = dets.iter().collect();
        dets.sort_by_key(|d| d.detection_id);

        let centers: Vec<(i64, i64)> = dets.iter().map(|d| d.bbox.center2()).collect();
        let choice = assignment::solve(active.len(), dets.len(), |i, j| {
            let (ax, ay) = active[i].center2;
            let (bx, by) = centers[j];
            let d2 = (ax - bx).pow(2) + (ay - by).pow(2);
            (d2 as f64 <= radius2_sq).then_some(d2)
        });

        let mut step = LinkStep { frame_index: t, matched: Vec::new(), cost_quarter_px2: 0 };
        let mut taken = vec![false; dets.len()];
        for (i, j) in choice.iter().enumerate() {
            if let Some(j) = *j {
                let a = &mut active[i];
                let (ax, ay) = a.center2;
                step.cost_quarter_px2 += (ax - centers[j].0).pow(2) + (ay - centers[j].1).pow(2);
                a.center2 = centers[j];
                a.last_frame = t;
                taken[j] = true;
                step.matched.push((a.id, dets[j].detection_id));
                push_entry(&mut out, a.id, t, dets[j].detection_id);
            }
        }
        for (j, d) in dets.iter().enumerate() {
            if !taken[j] {
                let id = next_track;
                next_track += 1;
                active.push(ActiveTrack { id, center2: centers[j], last_frame: t });
                push_entry(&mut out, id, t, d.detection_id);
            }
        }
        steps.push(step);
    }
    (out, steps)
}

fn push_entry(out: &mut TrackAssignment, track: u64, frame_index: usize, detection_id: DetectionId) {
    out.detection_to_track.insert(detection_id, track);
    out.tracks.entry(track).or_default().push(TrackEntry { frame_index, detection_id, synthetic: false });
}

/// Writes track IDs into the records (records without a track get `None`).
pub fn apply_tracks(records: &mut [DetectionRecord], assignment: &TrackAssignment) {
    for r in records {
        r.track_id = assignment.track_of(r.detection_id);
    }
}

/// Inserts a synthetic record for every frame missing inside a track's
/// lifetime, copying the bbox and confidence of the most recent real record.
/// Returns the new records; `assignment` gains the matching synthetic entries.
pub fn fill_gaps(
    assignment: &mut TrackAssignment,
    records: &[DetectionRecord],
    ids: &mut IdAllocator,
) -> Vec<DetectionRecord> {
    let by_id: BTreeMap<DetectionId, &DetectionRecord> = records.iter().map(|r| (r.detection_id, r)).collect();
    let mut created = Vec::new();
    for (&track, entries) in assignment.tracks.iter_mut() {
        entries.sort_by_key(|e| e.frame_index);
        let mut filled = Vec::with_capacity(entries.len());
        let mut last_real: Option<&DetectionRecord> = None;
        for e in entries.iter() {
            if let (Some(prev_frame), Some(src)) = (filled.last().map(|p: &TrackEntry| p.frame_index), last_real) {
                for f in prev_frame + 1..e.frame_index {
                    let rec = DetectionRecord {
                        detection_id: ids.next_id(),
                        frame_index: f,
                        bbox: src.bbox,
                        confidence: src.confidence,
                        provenance: Provenance::GapFill,
                        track_id: Some(track),
                    };
                    filled.push(TrackEntry { frame_index: f, detection_id: rec.detection_id, synthetic: true });
                    created.push(rec);
                }
            }
            if !e.synthetic {
                last_real = by_id.get(&e.detection_id).copied().or(last_real);
            }
            filled.push(*e);
        }
        *entries = filled;
    }
    for r in &created {
        assignment.detection_to_track.insert(r.detection_id, r.track_id.expect("synthetic records carry a track"));
    }
    created
}
