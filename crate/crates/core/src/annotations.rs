//! Manual annotations keyed by detection ID, and resumable annotation sessions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::DetectionId;
use crate::features::ruler_length;
use crate::geometry::{Point, Rect};
use crate::imaging::Digest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationKind {
    Text,
    Number,
    Classes,
    Object,
    Ruler,
}

impl AnnotationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AnnotationKind::Text => "text",
            AnnotationKind::Number => "number",
            AnnotationKind::Classes => "classes",
            AnnotationKind::Object => "object",
            AnnotationKind::Ruler => "ruler",
        }
    }
}

impl fmt::Display for AnnotationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AnnotationKind {
    type Err = AnnotationError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "text" => AnnotationKind::Text,
            "number" => AnnotationKind::Number,
            "classes" => AnnotationKind::Classes,
            "object" => AnnotationKind::Object,
            "ruler" => AnnotationKind::Ruler,
            other => return Err(AnnotationError::UnknownKind(other.to_string())),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Payload {
    Text(String),
    Number(f64),
    Classes(BTreeSet<String>),
    Object(Vec<Rect>),
    Ruler(Vec<Vec<Point>>),
}

impl Payload {
    /// Value checks independent of any annotation session: finite numbers,
    /// object boxes inside the frame, rulers of at least two points.
    pub fn validate(&self, bounds: FrameBounds) -> Result<(), AnnotationError> {
        match self {
            Payload::Number(v) if !v.is_finite() => {
                Err(AnnotationError::PayloadMismatch { kind: AnnotationKind::Number, got: v.to_string() })
            }
            Payload::Object(rects) => match rects.iter().find(|r| !r.is_valid() || !r.within(bounds.width, bounds.height)) {
                Some(bad) => Err(AnnotationError::RectOutOfBounds(*bad)),
                None => Ok(()),
            },
            Payload::Ruler(lines) if lines.iter().any(|l| l.len() < 2) => Err(AnnotationError::ShortRuler),
            _ => Ok(()),
        }
    }

    pub fn kind(&self) -> AnnotationKind {
        match self {
            Payload::Text(_) => AnnotationKind::Text,
            Payload::Number(_) => AnnotationKind::Number,
            Payload::Classes(_) => AnnotationKind::Classes,
            Payload::Object(_) => AnnotationKind::Object,
            Payload::Ruler(_) => AnnotationKind::Ruler,
        }
    }

    /// Parses an untyped JSON value as a payload of `kind`.
    pub fn from_json(kind: AnnotationKind, value: &serde_json::Value) -> Result<Payload, AnnotationError> {
        use serde_json::Value as J;
        let mismatch = || AnnotationError::PayloadMismatch { kind, got: value.to_string() };
        Ok(match (kind, value) {
            (AnnotationKind::Text, J::String(s)) => Payload::Text(s.clone()),
            (AnnotationKind::Number, J::Number(n)) => Payload::Number(n.as_f64().ok_or_else(mismatch)?),
            (AnnotationKind::Classes, J::Array(items)) => Payload::Classes(
                items.iter().map(|v| v.as_str().map(str::to_string).ok_or_else(mismatch)).collect::<Result<_, _>>()?,
            ),
            (AnnotationKind::Object, J::Array(_)) => {
                Payload::Object(serde_json::from_value(value.clone()).map_err(|_| mismatch())?)
            }
            (AnnotationKind::Ruler, J::Array(_)) => {
                Payload::Ruler(serde_json::from_value(value.clone()).map_err(|_| mismatch())?)
            }
            _ => return Err(mismatch()),
        })
    }

    /// CSV cell rendering: classes joined with `;`, geometric payloads as JSON.
    pub fn to_cell(&self) -> String {
        match self {
            Payload::Text(s) => s.clone(),
            Payload::Number(v) => v.to_string(),
            Payload::Classes(set) => set.iter().cloned().collect::<Vec<_>>().join(";"),
            Payload::Object(r) => serde_json::to_string(r).unwrap_or_default(),
            Payload::Ruler(r) => serde_json::to_string(r).unwrap_or_default(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AnnotationError {
    #[error("unknown annotation kind {0:?}")]
    UnknownKind(String),
    #[error("detection {0} is not a target of this session")]
    NotInSession(DetectionId),
    #[error("payload does not match kind {kind}: {got}")]
    PayloadMismatch { kind: AnnotationKind, got: String },
    #[error("class label {0:?} is not in the session vocabulary")]
    UnknownLabel(String),
    #[error("object rect {0:?} is outside the frame")]
    RectOutOfBounds(Rect),
    #[error("ruler polyline needs at least 2 points")]
    ShortRuler,
    #[error("no cached annotation session {0:?}")]
    NotFound(String),
    #[error("session io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub detection_id: DetectionId,
    /// Column name within the kind, e.g. `phenotype` for `ann:classes:phenotype`.
    pub name: String,
    pub payload: Payload,
    pub author: String,
    /// Milliseconds since the Unix epoch.
    pub timestamp: i64,
}

impl Annotation {
    pub fn kind(&self) -> AnnotationKind {
        self.payload.kind()
    }

    /// Export column name `ann:<kind>:<name>`.
    pub fn column(&self) -> String {
        column_name(self.kind(), &self.name)
    }
}

pub fn column_name(kind: AnnotationKind, name: &str) -> String {
    format!("ann:{kind}:{name}")
}

/// Numeric `ruler_length_<n>` values (1-based) for a ruler payload.
pub fn ruler_columns(payload: &Payload, pixel_scale: Option<f64>) -> Vec<(String, f64)> {
    match payload {
        Payload::Ruler(lines) => lines
            .iter()
            .enumerate()
            .filter_map(|(i, l)| ruler_length(l, pixel_scale).ok().map(|v| (format!("ruler_length_{}", i + 1), v)))
            .collect(),
        _ => Vec::new(),
    }
}

pub type AnnotationKey = (DetectionId, AnnotationKind, String);

/// All annotations of a session, one per `(detection, kind, name)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<Annotation>", into = "Vec<Annotation>")]
pub struct AnnotationStore {
    entries: BTreeMap<AnnotationKey, Annotation>,
}

impl From<Vec<Annotation>> for AnnotationStore {
    fn from(v: Vec<Annotation>) -> Self {
        let mut s = AnnotationStore::default();
        for a in v {
            s.put(a);
        }
        s
    }
}

impl From<AnnotationStore> for Vec<Annotation> {
    fn from(s: AnnotationStore) -> Self {
        s.entries.into_values().collect()
    }
}

impl AnnotationStore {
    /// Inserts or replaces; returns the replaced annotation.
    pub fn put(&mut self, a: Annotation) -> Option<Annotation> {
        self.entries.insert((a.detection_id, a.kind(), a.name.clone()), a)
    }

    pub fn get(&self, id: DetectionId, kind: AnnotationKind, name: &str) -> Option<&Annotation> {
        self.entries.get(&(id, kind, name.to_string()))
    }

    pub fn for_detection(&self, id: DetectionId) -> impl Iterator<Item = &Annotation> {
        self.entries.values().filter(move |a| a.detection_id == id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Annotation> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn remove_detection(&mut self, id: DetectionId) -> usize {
        let before = self.entries.len();
        self.entries.retain(|k, _| k.0 != id);
        before - self.entries.len()
    }

    pub fn retain(&mut self, keep: impl Fn(&Annotation) -> bool) {
        self.entries.retain(|_, a| keep(a));
    }

    /// Distinct `ann:<kind>:<name>` columns in sorted order.
    pub fn columns(&self) -> Vec<String> {
        let set: BTreeSet<String> = self.entries.values().map(Annotation::column).collect();
        set.into_iter().collect()
    }
}

/// Frame geometry used to validate object payloads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameBounds {
    pub width: usize,
    pub height: usize,
}

/// A resumable pass over a list of detections, producing one annotation
/// column of one kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSession {
    pub name: String,
    pub kind: AnnotationKind,
    pub target_ids: Vec<DetectionId>,
    pub cursor: usize,
    pub label_vocabulary: Option<BTreeSet<String>>,
    pub annotations: BTreeMap<DetectionId, Annotation>,
}

impl AnnotationSession {
    pub fn new(
        name: impl Into<String>,
        kind: AnnotationKind,
        target_ids: Vec<DetectionId>,
        label_vocabulary: Option<BTreeSet<String>>,
    ) -> Self {
        Self { name: name.into(), kind, target_ids, cursor: 0, label_vocabulary, annotations: BTreeMap::new() }
    }

    /// Next detection awaiting annotation.
    pub fn current(&self) -> Option<DetectionId> {
        self.target_ids.get(self.cursor).copied()
    }

    pub fn is_complete(&self) -> bool {
        self.cursor == self.target_ids.len()
    }

    pub fn validate(&self, payload: &Payload, bounds: FrameBounds) -> Result<(), AnnotationError> {
        if payload.kind() != self.kind {
            return Err(AnnotationError::PayloadMismatch {
                kind: self.kind,
                got: serde_json::to_string(payload).unwrap_or_default(),
            });
        }
        if let (Payload::Classes(labels), Some(vocab)) = (payload, &self.label_vocabulary) {
            if let Some(bad) = labels.iter().find(|l| !vocab.contains(*l)) {
                return Err(AnnotationError::UnknownLabel(bad.clone()));
            }
        }
        payload.validate(bounds)
    }

    /// Records (or overwrites) the annotation of `detection_id` and advances
    /// the cursor past the annotated prefix of the target list.
    pub fn annotate(
        &mut self,
        detection_id: DetectionId,
        payload: Payload,
        author: &str,
        timestamp: i64,
        bounds: FrameBounds,
    ) -> Result<&Annotation, AnnotationError> {
        if !self.target_ids.contains(&detection_id) {
            return Err(AnnotationError::NotInSession(detection_id));
        }
        self.validate(&payload, bounds)?;
        let a = Annotation { detection_id, name: self.name.clone(), payload, author: author.to_string(), timestamp };
        self.annotations.insert(detection_id, a);
        while self.cursor < self.target_ids.len() && self.annotations.contains_key(&self.target_ids[self.cursor]) {
            self.cursor += 1;
        }
        Ok(&self.annotations[&detection_id])
    }

    /// Drops a deleted detection from targets and annotations.
    pub fn forget(&mut self, id: DetectionId) {
        self.annotations.remove(&id);
        self.target_ids.retain(|t| *t != id);
        self.cursor = self.target_ids.iter().take_while(|t| self.annotations.contains_key(t)).count();
    }

    pub fn cache_path(cache_root: &Path, hash: &Digest, name: &str) -> PathBuf {
        cache_root.join(hash.to_string()).join("annotation_sessions").join(format!("{name}.json"))
    }

    /// Persists the full session state under `(hash, name)`.
    pub fn suspend(&self, cache_root: &Path, hash: &Digest) -> Result<PathBuf, AnnotationError> {
        let path = Self::cache_path(cache_root, hash, &self.name);
        let bytes = serde_json::to_vec_pretty(self).map_err(|e| AnnotationError::Io(e.to_string()))?;
        crate::fsutil::write_atomic(&path, &bytes).map_err(|e| AnnotationError::Io(e.to_string()))?;
        Ok(path)
    }

    pub fn resume(cache_root: &Path, hash: &Digest, name: &str) -> Result<AnnotationSession, AnnotationError> {
        let path = Self::cache_path(cache_root, hash, name);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(AnnotationError::NotFound(name.to_string()))
            }
            Err(e) => return Err(AnnotationError::Io(e.to_string())),
        };
        serde_json::from_slice(&bytes).map_err(|e| AnnotationError::Io(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    const B: FrameBounds = FrameBounds { width: 100, height: 100 };

    fn ids(n: u64) -> Vec<DetectionId> {
        (1..=n).map(DetectionId).collect()
    }

    fn vocab() -> BTreeSet<String> {
        ["spheroid_I", "spheroid_II", "budding", "enteroid"].iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn classes_in_vocabulary() {
        let mut s = AnnotationSession::new("phenotype", AnnotationKind::Classes, ids(3), Some(vocab()));
        let p = Payload::from_json(AnnotationKind::Classes, &json!(["budding"])).unwrap();
        s.annotate(DetectionId(1), p, "me", 0, B).unwrap();
        assert_eq!(s.cursor, 1);
        let bad = Payload::Classes(["cyst".to_string()].into());
        assert_eq!(s.annotate(DetectionId(2), bad, "me", 0, B), Err(AnnotationError::UnknownLabel("cyst".into())));
    }

    #[test]
    fn number_type_error() {
        assert!(matches!(
            Payload::from_json(AnnotationKind::Number, &json!("abc")),
            Err(AnnotationError::PayloadMismatch { .. })
        ));
        let mut s = AnnotationSession::new("n", AnnotationKind::Number, ids(1), None);
        assert!(s.annotate(DetectionId(1), Payload::Text("abc".into()), "", 0, B).is_err());
    }

    #[test]
    fn ruler_materializes_length() {
        let mut s = AnnotationSession::new("wall", AnnotationKind::Ruler, ids(1), None);
        let p = Payload::from_json(AnnotationKind::Ruler, &json!([[[0, 0], [3, 4]]])).unwrap();
        let a = s.annotate(DetectionId(1), p, "", 0, B).unwrap().clone();
        assert_eq!(ruler_columns(&a.payload, None), vec![("ruler_length_1".to_string(), 5.0)]);
        assert_eq!(a.column(), "ann:ruler:wall");
    }

    #[test]
    fn rejects_foreign_id_and_bad_rect() {
        let mut s = AnnotationSession::new("o", AnnotationKind::Object, ids(2), None);
        assert_eq!(
            s.annotate(DetectionId(9), Payload::Object(vec![]), "", 0, B),
            Err(AnnotationError::NotInSession(DetectionId(9)))
        );
        let r = Rect::new(90, 90, 110, 95);
        assert_eq!(s.annotate(DetectionId(1), Payload::Object(vec![r]), "", 0, B), Err(AnnotationError::RectOutOfBounds(r)));
    }

    #[test]
    fn cursor_skips_contiguous_prefix() {
        let mut s = AnnotationSession::new("t", AnnotationKind::Text, ids(4), None);
        s.annotate(DetectionId(2), Payload::Text("b".into()), "", 0, B).unwrap();
        assert_eq!(s.cursor, 0);
        s.annotate(DetectionId(1), Payload::Text("a".into()), "", 0, B).unwrap();
        assert_eq!(s.cursor, 2);
        assert_eq!(s.current(), Some(DetectionId(3)));
    }

    #[test]
    fn suspend_resume_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let hash = crate::imaging::sha256(b"img");
        let mut s = AnnotationSession::new("notes", AnnotationKind::Text, ids(10), None);
        for i in 1..=3 {
            s.annotate(DetectionId(i), Payload::Text(format!("n{i}")), "me", 1_700_000_000_000 + i as i64, B).unwrap();
        }
        s.suspend(dir.path(), &hash).unwrap();
        s.suspend(dir.path(), &hash).unwrap();
        let r = AnnotationSession::resume(dir.path(), &hash, "notes").unwrap();
        assert_eq!(r, s);
        assert_eq!(r.current(), Some(DetectionId(4)));
    }

    #[test]
    fn resume_fresh_cache_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let hash = crate::imaging::sha256(b"img");
        assert_eq!(
            AnnotationSession::resume(dir.path(), &hash, "x"),
            Err(AnnotationError::NotFound("x".into()))
        );
    }

    #[test]
    fn store_overwrites_and_cascades() {
        let mut st = AnnotationStore::default();
        let mk = |id, v: &str| Annotation {
            detection_id: DetectionId(id),
            name: "note".into(),
            payload: Payload::Text(v.into()),
            author: String::new(),
            timestamp: 0,
        };
        st.put(mk(1, "a"));
        assert!(st.put(mk(1, "b")).is_some());
        st.put(mk(2, "c"));
        assert_eq!(st.len(), 2);
        assert_eq!(st.remove_detection(DetectionId(1)), 1);
        let json = serde_json::to_string(&st).unwrap();
        let back: AnnotationStore = serde_json::from_str(&json).unwrap();
        assert_eq!(back, st);
        assert_eq!(st.columns(), vec!["ann:text:note".to_string()]);
    }
}
