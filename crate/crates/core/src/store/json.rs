use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Session, StoreError};
use crate::annotations::Annotation;
use crate::detection::{check_bbox, DetectionError, DetectionId, Provenance};
use crate::features::{Column, Value};
use crate::geometry::{Point, Rect};
use crate::imaging::Digest;
use crate::segmentation::PolygonMask;
use crate::tracking::TrackAssignment;

pub const EXPORT_VERSION: u32 = 1;
const FORMAT: &str = "orgapipe-export";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ExportRecord {
    detection_id: DetectionId,
    frame: usize,
    bbox: Rect,
    confidence: f64,
    provenance: Provenance,
    track_id: Option<u64>,
    hidden: bool,
    masks: BTreeMap<String, Vec<Point>>,
    features: BTreeMap<String, Value>,
    annotations: Vec<Annotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ExportDoc {
    format: String,
    version: u32,
    image_hash: Digest,
    columns: Vec<Column>,
    records: Vec<ExportRecord>,
}

/// Canonical JSON (sorted keys) of the given records, or of all records.
pub fn export_json(session: &Session, ids: Option<&[DetectionId]>) -> Result<Vec<u8>, StoreError> {
    let ids: Vec<DetectionId> = match ids {
        Some(ids) => {
            let mut v = ids.to_vec();
            v.sort();
            v.dedup();
            v
        }
        None => session.records.keys().copied().collect(),
    };
    let mut records = Vec::with_capacity(ids.len());
    for id in ids {
        let r = session.record(id)?;
        records.push(ExportRecord {
            detection_id: id,
            frame: r.frame_index,
            bbox: r.bbox,
            confidence: r.confidence,
            provenance: r.provenance,
            track_id: r.track_id,
            hidden: session.hidden.contains(&id),
            masks: session
                .masks
                .range((id, String::new())..)
                .take_while(|((d, _), _)| *d == id)
                .map(|((_, c), m)| (c.clone(), m.vertices.clone()))
                .collect(),
            features: session.features.row(id).cloned().unwrap_or_default(),
            annotations: session.annotations.for_detection(id).cloned().collect(),
        });
    }
    let doc = ExportDoc {
        format: FORMAT.into(),
        version: EXPORT_VERSION,
        image_hash: session.image_hash,
        columns: session.features.columns().to_vec(),
        records,
    };
    // through Value so object keys come out sorted
    let value = serde_json::to_value(&doc).map_err(|e| StoreError::Json(e.to_string()))?;
    let mut out = serde_json::to_vec_pretty(&value).map_err(|e| StoreError::Json(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImportReport {
    /// `(id in document, id in session)` for every imported record.
    pub id_map: Vec<(DetectionId, DetectionId)>,
    pub remapped: bool,
    pub warnings: Vec<String>,
}

/// Merges an exported document into `session`. IDs are kept unless the
/// document belongs to another image or an ID is already taken; then every
/// record gets a fresh ID (and loses its track).
pub fn import_json(session: &mut Session, bytes: &[u8]) -> Result<ImportReport, StoreError> {
    let doc: ExportDoc = serde_json::from_slice(bytes).map_err(|e| StoreError::Json(e.to_string()))?;
    if doc.format != FORMAT {
        return Err(StoreError::Invalid(format!("not an export document (format {:?})", doc.format)));
    }
    if doc.version != EXPORT_VERSION {
        return Err(StoreError::Invalid(format!("unsupported export version {}", doc.version)));
    }
    let mut report = ImportReport::default();
    if doc.image_hash != session.image_hash {
        report.warnings.push(format!(
            "document image hash {} differs from session {}; importing with fresh ids",
            doc.image_hash, session.image_hash
        ));
        report.remapped = true;
    }
    let collisions: Vec<DetectionId> =
        doc.records.iter().map(|r| r.detection_id).filter(|id| session.records.contains_key(id)).collect();
    if !collisions.is_empty() {
        report.warnings.push(format!("{} detection ids already in use; importing with fresh ids", collisions.len()));
        report.remapped = true;
    }
    let (w, h) = (session.image.width, session.image.height);
    for r in &doc.records {
        if r.frame >= session.image.frames {
            return Err(DetectionError::UnknownFrame(r.frame).into());
        }
        check_bbox(&r.bbox, w, h)?;
        if r.annotations.iter().any(|a| a.detection_id != r.detection_id) {
            return Err(StoreError::Invalid(format!("record {} carries foreign annotations", r.detection_id)));
        }
        if let Some(name) = r.features.keys().find(|n| !doc.columns.iter().any(|c| &c.name == *n)) {
            return Err(StoreError::Invalid(format!("feature {name:?} missing from the column list")));
        }
    }

    for c in &doc.columns {
        session.features.register(&c.name, c.kind.clone());
    }
    for r in doc.records {
        let id = if report.remapped { session.ids.next_id() } else { r.detection_id };
        session.ids.observe(id);
        report.id_map.push((r.detection_id, id));
        session.records.insert(
            id,
            crate::detection::DetectionRecord {
                detection_id: id,
                frame_index: r.frame,
                bbox: r.bbox,
                confidence: r.confidence,
                provenance: r.provenance,
                track_id: if report.remapped { None } else { r.track_id },
            },
        );
        if r.hidden {
            session.hidden.insert(id);
        }
        for (channel, vertices) in r.masks {
            session.masks.insert(
                (id, channel.clone()),
                PolygonMask { detection_id: id, frame_index: r.frame, channel_name: channel, vertices },
            );
        }
        session.features.ensure_row(id);
        for (name, v) in r.features {
            session.features.set(id, &name, v);
        }
        for mut a in r.annotations {
            a.detection_id = id;
            session.annotations.put(a);
        }
    }
    session.tracks = TrackAssignment::from_records(session.records.values());
    Ok(report)
}
