use super::*;
use crate::annotations::{AnnotationKind, AnnotationSession, Payload};
use crate::detection::{ClassicalDetector, EditOp, NmsConfig, TilingConfig};
use crate::features::Value;
use crate::geometry::{Point, Rect};
use crate::ml::{Architecture, ModelSpec, Task};
use crate::segmentation::{ClassicalSegmenter, SegmentConfig};
use crate::synthetic::DiskTimelapse;
use crate::tracking::TrackingConfig;

fn tiling() -> TilingConfig {
    TilingConfig { window_size: 160, downsampling_rates: vec![1] }
}

/// Detected, tracked, segmented and measured fixture session.
fn full_session() -> (ImageStack, Session) {
    let stack = DiskTimelapse { frames: 3, ..Default::default() }.stack();
    let mut s = Session::new(&stack, &[]);
    s.detect(&stack, &ClassicalDetector, &tiling(), &NmsConfig::default(), None).unwrap();
    s.track(&TrackingConfig { search_radius: 10.0, ..Default::default() }).unwrap();
    s.segment(&stack, &[], &ClassicalSegmenter, &SegmentConfig::default()).unwrap();
    s.compute_features(&stack, &[]).unwrap();
    (stack, s)
}

#[test]
fn pipeline_builds_consistent_session() {
    let (_, s) = full_session();
    assert_eq!(s.records.len(), 9);
    assert_eq!(s.tracks.tracks.len(), 3);
    assert_eq!(s.masks.len(), 9);
    assert!(s.integrity_violations().is_empty(), "{:?}", s.integrity_violations());
    for r in s.records.values() {
        let area = s.features.number(r.detection_id, "area").unwrap();
        let expect = std::f64::consts::PI * 225.0;
        assert!((area - expect).abs() / expect < 0.05);
    }
}

#[test]
fn delete_sweep_keeps_integrity() {
    let (_, mut s) = full_session();
    let mut annot = AnnotationSession::new("note", AnnotationKind::Text, s.records.keys().copied().collect(), None);
    for id in s.records.keys().copied().collect::<Vec<_>>() {
        s.annotate(&mut annot, id, Payload::Text(format!("n{id}")), "t", 0).unwrap();
    }
    let ids: Vec<DetectionId> = s.records.keys().copied().collect();
    for id in ids {
        s.edit(EditOp::Delete { detection_id: id }).unwrap();
        assert!(s.integrity_violations().is_empty(), "{:?}", s.integrity_violations());
        assert!(s.masks.keys().all(|(d, _)| *d != id));
        assert!(s.features.row(id).is_none());
        assert_eq!(s.annotations.for_detection(id).count(), 0);
    }
    assert!(s.records.is_empty() && s.masks.is_empty() && s.annotations.is_empty());
}

#[test]
fn edits() {
    let (_, mut s) = full_session();
    let id = s.edit(EditOp::Add { frame_index: 0, bbox: Rect::new(10, 10, 50, 50) }).unwrap();
    let r = s.record(id).unwrap();
    assert_eq!((r.confidence, r.provenance), (1.0, Provenance::Manual));
    assert!(id.0 > 9);
    assert!(matches!(
        s.edit(EditOp::Delete { detection_id: DetectionId(999) }),
        Err(StoreError::UnknownId(DetectionId(999)))
    ));
    let first = DetectionId(1);
    s.put_annotation(Annotation {
        detection_id: first,
        name: "n".into(),
        payload: Payload::Number(3.0),
        author: String::new(),
        timestamp: 0,
    })
    .unwrap();
    s.edit(EditOp::Modify { detection_id: first, bbox: Rect::new(1, 2, 30, 40) }).unwrap();
    assert_eq!(s.record(first).unwrap().bbox, Rect::new(1, 2, 30, 40));
    assert_eq!(s.annotations.for_detection(first).count(), 1);
    assert!(s.features.number(first, "area").is_none());
    assert!(matches!(
        s.edit(EditOp::Modify { detection_id: first, bbox: Rect::new(150, 150, 170, 170) }),
        Err(StoreError::Detection(_))
    ));
    assert!(s.integrity_violations().is_empty());
}

#[test]
fn filter_hides_and_restores() {
    let (_, mut s) = full_session();
    assert_eq!(s.apply_filter(FilterConfig { min_confidence: 0.0, min_diameter: 1000.0 }).unwrap(), 0);
    assert!(s.visible_records().is_empty());
    assert_eq!(s.apply_filter(FilterConfig::default()).unwrap(), 9);
    assert_eq!(s.records.len(), 9);
}

#[test]
fn gap_fill_creates_records() {
    let stack = DiskTimelapse { frames: 3, ..Default::default() }.stack();
    let mut s = Session::new(&stack, &[]);
    s.detect(&stack, &ClassicalDetector, &tiling(), &NmsConfig::default(), None).unwrap();
    let middle: Vec<DetectionId> = s.records.values().filter(|r| r.frame_index == 1).map(|r| r.detection_id).collect();
    s.delete(middle[0]).unwrap();
    let rep = s.track(&TrackingConfig { search_radius: 12.0, memory: 1, fill_gaps: true }).unwrap();
    assert_eq!(rep.tracks, 3);
    assert_eq!(rep.gap_filled.len(), 1);
    assert_eq!(s.record(rep.gap_filled[0]).unwrap().provenance, Provenance::GapFill);
    assert!(s.integrity_violations().is_empty());
    // re-tracking replaces the synthetic record instead of stacking another
    let again = s.track(&TrackingConfig { search_radius: 12.0, memory: 1, fill_gaps: true }).unwrap();
    assert_eq!(s.records.values().filter(|r| r.provenance == Provenance::GapFill).count(), 1);
    assert_eq!(again.tracks, 3);
}

#[test]
fn train_and_predict_from_annotations() {
    let (_, mut s) = full_session();
    let ids: Vec<DetectionId> = s.records.keys().copied().collect();
    for (i, id) in ids.iter().enumerate() {
        let label = if s.record(*id).unwrap().bbox.x_min < 80 { "left" } else { "right" };
        s.put_annotation(Annotation {
            detection_id: *id,
            name: "side".into(),
            payload: Payload::Classes([label.to_string()].into()),
            author: String::new(),
            timestamp: i as i64,
        })
        .unwrap();
    }
    let cols = vec!["mean_intensity:primary".to_string(), "area".to_string()];
    let spec = ModelSpec::new(Architecture::Knn, Task::Classification, 0).with("k", 1.0);
    let summary = s.train("side", &spec, Some(&cols), "ann:classes:side", None).unwrap();
    assert_eq!(summary.n_samples, 9);
    assert_eq!(s.predict("side").unwrap(), 9);
    assert!(matches!(s.features.get(ids[0], "pred:side"), Some(Value::Text(_))));
    assert!(matches!(s.predict("nope"), Err(StoreError::UnknownModel(_))));
    assert!(s.train("../x", &spec, Some(&cols), "ann:classes:side", None).is_err());
}

#[test]
fn cache_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cache = Cache::new(dir.path());
    let (_, mut s) = full_session();
    s.put_annotation(Annotation {
        detection_id: DetectionId(2),
        name: "len".into(),
        payload: Payload::Ruler(vec![vec![Point::new(0.0, 0.0), Point::new(3.0, 4.0)]]),
        author: "me".into(),
        timestamp: 5,
    })
    .unwrap();
    let d = crate::synthetic::separable_blobs(10, 1);
    s.models.insert("m".into(), crate::ml::train(&ModelSpec::new(Architecture::Knn, Task::Classification, 0), &d).unwrap());
    cache.save(&s).unwrap();
    let back = cache.load(&s.image_hash).unwrap();
    assert_eq!(back, s);
    assert!(cache.load(&crate::imaging::sha256(b"unseen")).is_none());
}

#[test]
fn corrupt_cache_is_a_miss() {
    let dir = tempfile::tempdir().unwrap();
    let cache = Cache::new(dir.path());
    let (_, s) = full_session();
    let path = cache.save(&s).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replacen("\"confidence\": ", "\"confidence\": 0.5", 1).replacen("0.50.", "0.5", 1)).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    let n = bytes.len();
    bytes.truncate(n / 2);
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(cache.lookup(&s.image_hash), CacheLookup::Corrupt(_)));
    assert!(cache.load(&s.image_hash).is_none());
}

#[test]
fn checksum_catches_edited_value() {
    let dir = tempfile::tempdir().unwrap();
    let cache = Cache::new(dir.path());
    let (_, s) = full_session();
    let path = cache.save(&s).unwrap();
    let mut doc: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    doc["session"]["roi"] = serde_json::json!([0, 0, 5, 5]);
    std::fs::write(&path, serde_json::to_vec(&doc).unwrap()).unwrap();
    assert!(matches!(cache.lookup(&s.image_hash), CacheLookup::Corrupt(m) if m.contains("checksum")));
}

#[test]
fn crash_before_rename_keeps_previous_entry() {
    let dir = tempfile::tempdir().unwrap();
    let cache = Cache::new(dir.path());
    let (_, s) = full_session();
    cache.save(&s).unwrap();
    let mut changed = s.clone();
    changed.delete(DetectionId(1)).unwrap();
    inject_write_failure(true);
    assert!(cache.save(&changed).is_err());
    inject_write_failure(false);
    assert_eq!(cache.load(&s.image_hash).unwrap(), s);
    let leftovers: Vec<_> = std::fs::read_dir(cache.entry_dir(&s.image_hash))
        .unwrap()
        .flatten()
        .filter(|e| e.file_name() != "session.json" && e.file_name() != "models")
        .collect();
    assert!(leftovers.is_empty(), "temp files left: {leftovers:?}");
}

#[test]
fn json_subset_round_trip() {
    let (stack, s) = full_session();
    let subset = [DetectionId(1), DetectionId(3)];
    let doc = export_json(&s, Some(&subset)).unwrap();
    let mut fresh = Session::new(&stack, &[]);
    let rep = import_json(&mut fresh, &doc).unwrap();
    assert!(!rep.remapped && rep.warnings.is_empty());
    assert_eq!(fresh.records.keys().copied().collect::<Vec<_>>(), subset.to_vec());
    assert_eq!(export_json(&fresh, None).unwrap(), doc);
    assert!(fresh.integrity_violations().is_empty(), "{:?}", fresh.integrity_violations());

    let empty = export_json(&s, Some(&[])).unwrap();
    let v: serde_json::Value = serde_json::from_slice(&empty).unwrap();
    assert_eq!(v["records"].as_array().unwrap().len(), 0);
    assert!(matches!(export_json(&s, Some(&[DetectionId(99)])), Err(StoreError::UnknownId(_))));
}

#[test]
fn json_keys_are_sorted() {
    let (_, s) = full_session();
    let doc = export_json(&s, Some(&[DetectionId(1)])).unwrap();
    let text = String::from_utf8(doc).unwrap();
    let a = text.find("\"annotations\"").unwrap();
    let b = text.find("\"bbox\"").unwrap();
    let c = text.find("\"track_id\"").unwrap();
    assert!(a < b && b < c);
}

#[test]
fn json_import_other_image_remaps() {
    let (_, s) = full_session();
    let doc = export_json(&s, Some(&[DetectionId(1), DetectionId(2)])).unwrap();
    let other_stack = DiskTimelapse { frames: 3, radius: 14.0, ..Default::default() }.stack();
    let mut other = Session::new(&other_stack, &[]);
    other.edit(EditOp::Add { frame_index: 0, bbox: Rect::new(0, 0, 5, 5) }).unwrap();
    let rep = import_json(&mut other, &doc).unwrap();
    assert!(rep.remapped);
    // hash mismatch and id collision are both reported
    assert_eq!(rep.warnings.len(), 2);
    assert_eq!(rep.id_map, vec![(DetectionId(1), DetectionId(2)), (DetectionId(2), DetectionId(3))]);
    assert!(other.integrity_violations().is_empty());
}

#[test]
fn csv_layout_and_quoting() {
    let stack = DiskTimelapse { frames: 1, ..Default::default() }.stack();
    let mut s = Session::new(&stack, &[]);
    let a = s.edit(EditOp::Add { frame_index: 0, bbox: Rect::new(0, 0, 10, 10) }).unwrap();
    let b = s.edit(EditOp::Add { frame_index: 0, bbox: Rect::new(20, 20, 30, 30) }).unwrap();
    s.features.register("area", ColumnKind::Geometric);
    s.features.set(a, "area", Value::Number(100.0));
    s.features.set(b, "area", Value::Number(1.0 / 3.0));
    let text = export_csv(&s, false);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines.iter().all(|l| l.split(',').count() == 10));
    assert_eq!(lines[0], "detection_id,frame,track_id,x_min,y_min,x_max,y_max,confidence,provenance,area");
    assert_eq!(lines[2], "2,0,,20,20,30,30,1,manual,0.333333333");
    assert!(!text.contains('\r'));

    s.put_annotation(Annotation {
        detection_id: a,
        name: "note".into(),
        payload: Payload::Text("big, round".into()),
        author: String::new(),
        timestamp: 0,
    })
    .unwrap();
    let text = export_csv(&s, false);
    assert!(text.lines().next().unwrap().ends_with(",ann:text:note"));
    assert!(text.contains("\"big, round\""));
}

#[test]
fn csv_reingest_preserves_nine_digits() {
    let (_, s) = full_session();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    std::fs::write(&path, export_csv(&s, false)).unwrap();
    let cols = vec!["area".to_string(), "perimeter".to_string(), "eccentricity:primary".to_string()];
    let loaded = crate::ml::load_training_csv(&path, "provenance", Some(&cols), Task::Classification).unwrap();
    assert_eq!(loaded.dropped, 0);
    for (row, id) in loaded.dataset.x.iter().zip(s.records.keys()) {
        for (v, c) in row.iter().zip(&cols) {
            let orig = s.features.number(*id, c).unwrap();
            let expect: f64 = format!("{orig:.8e}").parse().unwrap();
            assert_eq!(v.to_bits(), expect.to_bits(), "{c}");
        }
    }
}

#[test]
fn format_number_cases() {
    assert_eq!(format_number(100.0), "100");
    assert_eq!(format_number(1.0 / 3.0), "0.333333333");
    assert_eq!(format_number(123456789012.0), "123456789000");
    assert_eq!(format_number(-0.0), "0");
    assert_eq!(format_number(f64::NAN), "");
}

fn tiny_session(w: usize, h: usize) -> Session {
    let stack = ImageStack::new(vec![crate::imaging::Frame::gray(w, h, vec![0.0; w * h]).unwrap()], None, "").unwrap();
    Session::new(&stack, &[])
}

fn add_mask(s: &mut Session, id: u64, rect: Rect) {
    let id = DetectionId(id);
    s.records.insert(
        id,
        crate::detection::DetectionRecord {
            detection_id: id,
            frame_index: 0,
            bbox: rect,
            confidence: 1.0,
            provenance: Provenance::Manual,
            track_id: None,
        },
    );
    s.ids.observe(id);
    let (x0, y0, x1, y1) = (rect.x_min as f64, rect.y_min as f64, rect.x_max as f64, rect.y_max as f64);
    s.masks.insert(
        (id, PRIMARY_CHANNEL.into()),
        crate::segmentation::PolygonMask {
            detection_id: id,
            frame_index: 0,
            channel_name: PRIMARY_CHANNEL.into(),
            vertices: vec![Point::new(x0, y0), Point::new(x1, y0), Point::new(x1, y1), Point::new(x0, y1)],
        },
    );
}

#[test]
fn npy_background_only() {
    let bytes = export_npy(&tiny_session(2, 2), 0).unwrap();
    assert_eq!(&bytes[..8], b"\x93NUMPY\x01\x00");
    let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    assert_eq!((10 + hlen) % 64, 0);
    assert_eq!(bytes[10 + hlen - 1], b'\n');
    assert_eq!(&bytes[10 + hlen..], &[0u8; 8]);
    let header = std::str::from_utf8(&bytes[10..10 + hlen]).unwrap();
    assert!(header.starts_with("{'descr': '<u2', 'fortran_order': False, 'shape': (2, 2), }"));
}

#[test]
fn npy_single_pixel() {
    let mut s = tiny_session(3, 2);
    add_mask(&mut s, 7, Rect::new(1, 1, 2, 2));
    let bytes = export_npy(&s, 0).unwrap();
    let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let payload: Vec<u16> = bytes[10 + hlen..].chunks(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
    assert_eq!(payload, vec![0, 0, 0, 0, 7, 0]);
}

#[test]
fn npy_overlap_and_wide_ids() {
    let mut s = tiny_session(5, 1);
    add_mask(&mut s, 3, Rect::new(0, 0, 3, 1));
    add_mask(&mut s, 5, Rect::new(1, 0, 4, 1));
    assert_eq!(label_image(&s, 0).unwrap(), vec![3, 3, 3, 5, 0]);
    add_mask(&mut s, 70000, Rect::new(4, 0, 5, 1));
    let bytes = export_npy(&s, 0).unwrap();
    assert!(std::str::from_utf8(&bytes[10..30]).unwrap().contains("<u4"));
    assert!(matches!(export_npy(&s, 1), Err(StoreError::Detection(_))));
}

/// Parses the file with numpy when it is installed.
#[test]
fn npy_reference_reader() {
    let probe = std::process::Command::new("python3").args(["-c", "import numpy"]).output();
    if !probe.map(|o| o.status.success()).unwrap_or(false) {
        eprintln!("numpy unavailable; skipping reference-reader check");
        return;
    }
    let mut s = tiny_session(5, 3);
    add_mask(&mut s, 2, Rect::new(0, 0, 2, 2));
    add_mask(&mut s, 9, Rect::new(3, 1, 5, 3));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("l.npy");
    std::fs::write(&path, export_npy(&s, 0).unwrap()).unwrap();
    let out = std::process::Command::new("python3")
        .args([
            "-c",
            "import sys, numpy as np; a = np.load(sys.argv[1]); print(a.dtype.str, a.shape, a.ravel().tolist())",
            path.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        String::from_utf8(out.stdout).unwrap().trim(),
        "<u2 (3, 5) [2, 2, 0, 0, 0, 2, 2, 0, 9, 9, 0, 0, 0, 9, 9]"
    );
}
