use orgapipe_bench::{classical_session, disk_stack, drifting_detections, random_boxes};

#[test]
fn generators_are_seeded() {
    assert_eq!(random_boxes(100, 7), random_boxes(100, 7));
    assert_ne!(random_boxes(100, 7), random_boxes(100, 8));
    let frames = drifting_detections(16, 4, 3);
    assert_eq!(frames, drifting_detections(16, 4, 3));
    assert!(frames.iter().all(|f| f.len() == 16));
}

#[test]
fn session_input_has_all_stages() {
    let s = classical_session(&disk_stack());
    assert_eq!(s.records.len(), 15);
    assert!(s.records.values().all(|r| r.track_id.is_some()));
}
