//! Detection-ID-indexed session state, cache persistence and exports.
//!
//! A [`Session`] holds everything derived from one image stack except the
//! pixels themselves; operations that need pixels take the stack as an argument.

mod cache;
mod csv_export;
mod json;
mod npy;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{ruler_columns, Annotation, AnnotationError, AnnotationKind, AnnotationSession, AnnotationStore, FrameBounds, Payload};
use crate::detection::{
    check_bbox, detect_frame, DetectionError, DetectionId, DetectionRecord, Detector, EditOp, FilterConfig, IdAllocator,
    NmsConfig, Provenance, TileError, TilingConfig,
};
use crate::features::{compute_all, ColumnKind, FeatureTable, MaskMap, Value};
use crate::geometry::Rect;
use crate::imaging::{Digest, ImageStack, Roi, SignalChannel};
use crate::ml::{self, CvConfig, Dataset, MlError, ModelSpec, Task, TrainedModel};
use crate::segmentation::{segment, SegmentConfig, SegmentationIssue, Segmenter, PRIMARY_CHANNEL};
use crate::tracking::{apply_tracks, fill_gaps, link, TrackAssignment, TrackingConfig, TrackingError};

pub use cache::{Cache, CacheLookup};
pub use csv_export::{export_csv, format_number, CSV_PREFIX};
pub use json::{export_json, import_json, ImportReport, EXPORT_VERSION};
pub use npy::{export_npy, label_image};

#[doc(hidden)]
pub use crate::fsutil::inject_write_failure;

pub const SESSION_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown detection id {0}")]
    UnknownId(DetectionId),
    #[error("unknown model {0:?}")]
    UnknownModel(String),
    #[error("image stack does not match the session (hash {expected} vs {got})")]
    StackMismatch { expected: Digest, got: Digest },
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error(transparent)]
    Tracking(#[from] TrackingError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Ml(#[from] MlError),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("json: {0}")]
    Json(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub source_path: String,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub channels: usize,
    pub bit_depth: u8,
    pub pixel_scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelInfo {
    pub name: String,
    pub source_path: String,
}

mod mask_list {
    use super::*;
    use crate::segmentation::PolygonMask;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &MaskMap, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.values())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<MaskMap, D::Error> {
        let v: Vec<PolygonMask> = Vec::deserialize(d)?;
        Ok(v.into_iter().map(|m| ((m.detection_id, m.channel_name.clone()), m)).collect())
    }
}

/// Everything known about one image stack, keyed by detection ID.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub version: u32,
    pub image_hash: Digest,
    pub image: ImageInfo,
    pub signal_channels: Vec<ChannelInfo>,
    pub records: BTreeMap<DetectionId, DetectionRecord>,
    pub roi: Option<Rect>,
    pub filter: FilterConfig,
    /// Records failing the current filter; kept, but excluded from
    /// tracking, segmentation, features and exports.
    pub hidden: BTreeSet<DetectionId>,
    pub tracks: TrackAssignment,
    #[serde(with = "mask_list")]
    pub masks: MaskMap,
    pub features: FeatureTable,
    pub annotations: AnnotationStore,
    /// Trained models by name; persisted as separate container files.
    #[serde(skip)]
    pub models: BTreeMap<String, TrainedModel>,
    pub ids: IdAllocator,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectReport {
    pub created: Vec<DetectionId>,
    pub removed: Vec<DetectionId>,
    pub tile_errors: Vec<(usize, TileError)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackReport {
    pub tracks: usize,
    pub gap_filled: Vec<DetectionId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub masks: usize,
    pub issues: Vec<SegmentationIssue>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureReport {
    pub rows: usize,
    pub columns: usize,
    pub fallbacks: Vec<(DetectionId, String)>,
    pub errors: Vec<(DetectionId, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub name: String,
    pub n_samples: usize,
    pub dropped: usize,
    pub schema: Vec<String>,
    pub vocabulary: Vec<String>,
    pub report: ml::TrainingReport,
}

impl Session {
    pub fn new(stack: &ImageStack, channels: &[SignalChannel]) -> Session {
        let first = &stack.frames()[0];
        Session {
            version: SESSION_VERSION,
            image_hash: stack.content_hash(),
            image: ImageInfo {
                source_path: stack.source_path().to_string(),
                width: stack.width(),
                height: stack.height(),
                frames: stack.len(),
                channels: stack.channels(),
                bit_depth: first.original_bit_depth(),
                pixel_scale: stack.pixel_scale(),
            },
            signal_channels: channels
                .iter()
                .map(|c| ChannelInfo { name: c.name.clone(), source_path: c.stack.source_path().to_string() })
                .collect(),
            records: BTreeMap::new(),
            roi: None,
            filter: FilterConfig::default(),
            hidden: BTreeSet::new(),
            tracks: TrackAssignment::default(),
            masks: MaskMap::new(),
            features: FeatureTable::default(),
            annotations: AnnotationStore::default(),
            models: BTreeMap::new(),
            ids: IdAllocator::default(),
        }
    }

    fn check_stack(&self, stack: &ImageStack) -> Result<(), StoreError> {
        let got = stack.content_hash();
        if got != self.image_hash {
            return Err(StoreError::StackMismatch { expected: self.image_hash, got });
        }
        Ok(())
    }

    pub fn bounds(&self) -> FrameBounds {
        FrameBounds { width: self.image.width, height: self.image.height }
    }

    pub fn record(&self, id: DetectionId) -> Result<&DetectionRecord, StoreError> {
        self.records.get(&id).ok_or(StoreError::UnknownId(id))
    }

    pub fn is_visible(&self, id: DetectionId) -> bool {
        self.records.contains_key(&id) && !self.hidden.contains(&id)
    }

    /// Visible records in ID order.
    pub fn visible_records(&self) -> Vec<DetectionRecord> {
        self.records.values().filter(|r| !self.hidden.contains(&r.detection_id)).cloned().collect()
    }

    /// Removes a detection and everything keyed by it.
    pub fn delete(&mut self, id: DetectionId) -> Result<DetectionRecord, StoreError> {
        let rec = self.records.remove(&id).ok_or(StoreError::UnknownId(id))?;
        self.hidden.remove(&id);
        self.tracks.remove_detection(id);
        self.masks.retain(|(d, _), _| *d != id);
        self.features.remove_row(id);
        self.annotations.remove_detection(id);
        Ok(rec)
    }

    fn insert(&mut self, rec: DetectionRecord) {
        self.ids.observe(rec.detection_id);
        if !self.filter.accepts(&rec) {
            self.hidden.insert(rec.detection_id);
        }
        self.records.insert(rec.detection_id, rec);
    }

    pub fn set_roi(&mut self, roi: Option<Rect>) -> Result<(), StoreError> {
        if let Some(r) = roi {
            Roi::new(r, self.image.width, self.image.height).map_err(DetectionError::from)?;
        }
        self.roi = roi;
        Ok(())
    }

    /// Runs detection on `frames` (all when `None`). Earlier model and
    /// gap-fill records of those frames are replaced; manual ones are kept.
    pub fn detect(
        &mut self,
        stack: &ImageStack,
        detector: &dyn Detector,
        tiling: &TilingConfig,
        nms: &NmsConfig,
        frames: Option<&[usize]>,
    ) -> Result<DetectReport, StoreError> {
        self.check_stack(stack)?;
        let all: Vec<usize> = (0..stack.len()).collect();
        let frames = frames.unwrap_or(&all);
        if let Some(f) = frames.iter().find(|f| **f >= stack.len()) {
            return Err(DetectionError::UnknownFrame(*f).into());
        }
        let roi = self.roi.map(|r| Roi::new(r, self.image.width, self.image.height)).transpose().map_err(DetectionError::from)?;
        let mut report = DetectReport::default();
        let mut found = Vec::new();
        let mut ids = self.ids;
        for &f in frames {
            let out = detect_frame(&stack.frames()[f], f, detector, tiling, nms, roi.as_ref(), &mut ids)?;
            report.tile_errors.extend(out.tile_errors.into_iter().map(|e| (f, e)));
            found.push((f, out.records));
        }
        for (f, recs) in found {
            let stale: Vec<DetectionId> = self
                .records
                .values()
                .filter(|r| r.frame_index == f && r.provenance != Provenance::Manual)
                .map(|r| r.detection_id)
                .collect();
            for id in stale {
                self.delete(id)?;
                report.removed.push(id);
            }
            for r in recs {
                report.created.push(r.detection_id);
                self.insert(r);
            }
        }
        self.ids = ids;
        Ok(report)
    }

    /// Re-evaluates the filter over every record; returns the visible count.
    pub fn apply_filter(&mut self, cfg: FilterConfig) -> Result<usize, StoreError> {
        cfg.validate()?;
        self.filter = cfg;
        self.hidden = self.records.values().filter(|r| !cfg.accepts(r)).map(|r| r.detection_id).collect();
        Ok(self.records.len() - self.hidden.len())
    }

    /// Applies a manual edit; returns the affected ID. A modified box keeps
    /// its ID, annotations and predictions but loses its masks and measured
    /// features, which no longer match it.
    pub fn edit(&mut self, op: EditOp) -> Result<DetectionId, StoreError> {
        let (w, h) = (self.image.width, self.image.height);
        match op {
            EditOp::Add { frame_index, bbox } => {
                if frame_index >= self.image.frames {
                    return Err(DetectionError::UnknownFrame(frame_index).into());
                }
                check_bbox(&bbox, w, h)?;
                let id = self.ids.next_id();
                self.insert(DetectionRecord {
                    detection_id: id,
                    frame_index,
                    bbox,
                    confidence: 1.0,
                    provenance: Provenance::Manual,
                    track_id: None,
                });
                Ok(id)
            }
            EditOp::Modify { detection_id, bbox } => {
                self.record(detection_id)?;
                check_bbox(&bbox, w, h)?;
                let rec = self.records.get_mut(&detection_id).expect("checked");
                rec.bbox = bbox;
                let rec = rec.clone();
                if self.filter.accepts(&rec) {
                    self.hidden.remove(&detection_id);
                } else {
                    self.hidden.insert(detection_id);
                }
                self.masks.retain(|(d, _), _| *d != detection_id);
                let measured: Vec<String> = self
                    .features
                    .columns()
                    .iter()
                    .filter(|c| matches!(c.kind, ColumnKind::Geometric | ColumnKind::Intensity(_) | ColumnKind::Regionprops(_)))
                    .map(|c| c.name.clone())
                    .collect();
                for c in measured {
                    self.features.clear(detection_id, &c);
                }
                Ok(detection_id)
            }
            EditOp::Delete { detection_id } => {
                self.delete(detection_id)?;
                Ok(detection_id)
            }
        }
    }

    /// Links visible records across frames, replacing earlier gap-fill records.
    pub fn track(&mut self, cfg: &TrackingConfig) -> Result<TrackReport, StoreError> {
        cfg.validate()?;
        let synthetic: Vec<DetectionId> =
            self.records.values().filter(|r| r.provenance == Provenance::GapFill).map(|r| r.detection_id).collect();
        for id in synthetic {
            self.delete(id)?;
        }
        let mut frames: Vec<Vec<DetectionRecord>> = vec![Vec::new(); self.image.frames];
        for r in self.visible_records() {
            frames[r.frame_index].push(r);
        }
        let mut assignment = link(&frames, cfg);
        let mut recs: Vec<DetectionRecord> = self.records.values().cloned().collect();
        apply_tracks(&mut recs, &assignment);
        let mut report = TrackReport::default();
        if cfg.fill_gaps {
            let created = fill_gaps(&mut assignment, &recs, &mut self.ids);
            report.gap_filled = created.iter().map(|r| r.detection_id).collect();
            recs.extend(created);
        }
        for r in recs {
            self.insert(r);
        }
        report.tracks = assignment.tracks.len();
        self.tracks = assignment;
        Ok(report)
    }

    /// Segments visible records in every channel, replacing their masks.
    pub fn segment(
        &mut self,
        stack: &ImageStack,
        channels: &[SignalChannel],
        segmenter: &dyn Segmenter,
        cfg: &SegmentConfig,
    ) -> Result<SegmentReport, StoreError> {
        self.check_stack(stack)?;
        let recs = self.visible_records();
        let out = segment(&recs, stack, segmenter, channels, cfg);
        let ids: BTreeSet<DetectionId> = recs.iter().map(|r| r.detection_id).collect();
        self.masks.retain(|(d, _), _| !ids.contains(d));
        let n = out.masks.len();
        for m in out.masks {
            self.masks.insert((m.detection_id, m.channel_name.clone()), m);
        }
        Ok(SegmentReport { masks: n, issues: out.issues })
    }

    /// Measures visible records and merges the columns into the table.
    pub fn compute_features(&mut self, stack: &ImageStack, channels: &[SignalChannel]) -> Result<FeatureReport, StoreError> {
        self.check_stack(stack)?;
        let recs = self.visible_records();
        let out = compute_all(&recs, &self.masks, stack, channels);
        self.features.merge(&out);
        Ok(FeatureReport { rows: out.rows.len(), columns: out.columns.len(), fallbacks: out.fallbacks, errors: out.errors })
    }

    /// Stores an annotation; ruler payloads also write `ruler_length_<n>`.
    pub fn put_annotation(&mut self, a: Annotation) -> Result<(), StoreError> {
        self.record(a.detection_id)?;
        if a.name.is_empty() {
            return Err(StoreError::Invalid("annotation name is empty".into()));
        }
        a.payload.validate(self.bounds())?;
        for (col, v) in ruler_columns(&a.payload, self.image.pixel_scale) {
            self.features.register(&col, ColumnKind::Annotation);
            self.features.set(a.detection_id, &col, Value::Number(v));
        }
        self.annotations.put(a);
        Ok(())
    }

    /// Annotates through an annotation session and stores the result.
    pub fn annotate(
        &mut self,
        session: &mut AnnotationSession,
        id: DetectionId,
        payload: Payload,
        author: &str,
        timestamp: i64,
    ) -> Result<(), StoreError> {
        self.record(id)?;
        let a = session.annotate(id, payload, author, timestamp, self.bounds())?.clone();
        self.put_annotation(a)
    }

    /// Numeric non-annotation feature columns in registry order.
    pub fn default_feature_columns(&self) -> Vec<String> {
        self.features
            .columns()
            .iter()
            .filter(|c| matches!(c.kind, ColumnKind::Geometric | ColumnKind::Intensity(_) | ColumnKind::Regionprops(_)))
            .map(|c| c.name.clone())
            .collect()
    }

    fn label_of(&self, id: DetectionId, label: &str) -> Option<Value> {
        if let Some(rest) = label.strip_prefix("ann:") {
            let (kind, name) = rest.split_once(':')?;
            let kind: AnnotationKind = kind.parse().ok()?;
            let a = self.annotations.get(id, kind, name)?;
            return match &a.payload {
                Payload::Number(v) => Some(Value::Number(*v)),
                Payload::Text(t) if !t.is_empty() => Some(Value::Text(t.clone())),
                Payload::Classes(set) if !set.is_empty() => Some(Value::Text(a.payload.to_cell())),
                _ => None,
            };
        }
        self.features.get(id, label).cloned()
    }

    /// Training rows from visible records; rows with an absent cell are
    /// dropped and counted.
    pub fn dataset(&self, columns: Option<&[String]>, label: &str, task: Task) -> Result<(Dataset, usize), StoreError> {
        let columns = columns.map(<[String]>::to_vec).unwrap_or_else(|| self.default_feature_columns());
        let mut x = Vec::new();
        let mut texts = Vec::new();
        let mut values = Vec::new();
        let mut dropped = 0;
        for r in self.visible_records() {
            let id = r.detection_id;
            let row: Option<Vec<f64>> = columns.iter().map(|c| self.features.number(id, c)).collect();
            let y = self.label_of(id, label);
            match (row, y, task) {
                (Some(row), Some(Value::Text(t)), Task::Classification) => {
                    texts.push(t);
                    x.push(row);
                }
                (Some(row), Some(Value::Number(v)), Task::Classification) => {
                    texts.push(format_number(v));
                    x.push(row);
                }
                (Some(row), Some(Value::Number(v)), Task::Regression) => {
                    values.push(v);
                    x.push(row);
                }
                _ => dropped += 1,
            }
        }
        if x.is_empty() {
            return Err(MlError::NoRows.into());
        }
        let d = match task {
            Task::Classification => Dataset::classification(columns, x, texts)?,
            Task::Regression => Dataset::regression(columns, x, values)?,
        };
        Ok((d, dropped))
    }

    /// Trains and registers a model (replacing one of the same name).
    pub fn train(
        &mut self,
        name: &str,
        spec: &ModelSpec,
        columns: Option<&[String]>,
        label: &str,
        cv: Option<&CvConfig>,
    ) -> Result<TrainSummary, StoreError> {
        if name.is_empty() || name.contains(['/', '\\', '.']) {
            return Err(StoreError::Invalid(format!("model name {name:?} must be a plain identifier")));
        }
        let (data, dropped) = self.dataset(columns, label, spec.task)?;
        let mut model = ml::train(spec, &data)?;
        if let Some(cv) = cv {
            model.report.cv = Some(ml::cross_validate(spec, &data, cv)?);
        }
        let summary = TrainSummary {
            name: name.to_string(),
            n_samples: data.len(),
            dropped,
            schema: model.schema.clone(),
            vocabulary: model.vocabulary.clone(),
            report: model.report.clone(),
        };
        self.models.insert(name.to_string(), model);
        Ok(summary)
    }

    /// Writes `pred:<name>` for every visible record with a complete row;
    /// returns the number of predictions.
    pub fn predict(&mut self, name: &str) -> Result<usize, StoreError> {
        let model = self.models.get(name).ok_or_else(|| StoreError::UnknownModel(name.to_string()))?;
        let col = format!("pred:{name}");
        let mut out = Vec::new();
        for r in self.visible_records() {
            let row: Option<Vec<f64>> = model.schema.iter().map(|c| self.features.number(r.detection_id, c)).collect();
            let pred = match row {
                Some(row) => Some(model.predict_rows(&[row])?.remove(0)),
                None => None,
            };
            out.push((r.detection_id, pred));
        }
        self.features.register(&col, ColumnKind::Predicted);
        let mut n = 0;
        for (id, p) in out {
            match p {
                Some(p) => {
                    let v = match (p.label, p.value) {
                        (Some(l), _) => Value::Text(l),
                        (None, Some(v)) => Value::Number(v),
                        (None, None) => continue,
                    };
                    self.features.set(id, &col, v);
                    n += 1;
                }
                None => self.features.clear(id, &col),
            }
        }
        Ok(n)
    }

    /// Violations of referential integrity; empty when consistent.
    pub fn integrity_violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let live = |id: &DetectionId| self.records.contains_key(id);
        for (id, r) in &self.records {
            if *id != r.detection_id {
                v.push(format!("record key {id} holds {}", r.detection_id));
            }
            if r.detection_id.0 >= self.ids.peek() {
                v.push(format!("id {} not below allocator {}", r.detection_id, self.ids.peek()));
            }
            if r.frame_index >= self.image.frames {
                v.push(format!("record {id} on frame {}", r.frame_index));
            }
            if r.track_id != self.tracks.track_of(*id) {
                v.push(format!("record {id} track {:?} disagrees with assignment", r.track_id));
            }
        }
        v.extend(self.hidden.iter().filter(|id| !live(id)).map(|id| format!("hidden {id} is dead")));
        v.extend(self.masks.keys().filter(|(id, _)| !live(id)).map(|(id, c)| format!("mask {id}/{c} is dead")));
        v.extend(self.features.rows().filter(|(id, _)| !live(id)).map(|(id, _)| format!("feature row {id} is dead")));
        v.extend(self.annotations.iter().filter(|a| !live(&a.detection_id)).map(|a| format!("annotation {} is dead", a.detection_id)));
        v.extend(
            self.tracks
                .detection_to_track
                .keys()
                .filter(|id| !live(id))
                .map(|id| format!("track entry {id} is dead")),
        );
        for (t, entries) in &self.tracks.tracks {
            for e in entries {
                if self.tracks.track_of(e.detection_id) != Some(*t) {
                    v.push(format!("track {t} lists {} inconsistently", e.detection_id));
                }
            }
        }
        v
    }

    /// Primary-channel masks of `frame`.
    pub fn primary_masks(&self, frame: usize) -> impl Iterator<Item = &crate::segmentation::PolygonMask> {
        self.masks.values().filter(move |m| m.channel_name == PRIMARY_CHANNEL && m.frame_index == frame)
    }
}

#[cfg(test)]
mod tests;
