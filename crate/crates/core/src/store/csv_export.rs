use super::Session;
use crate::annotations::Payload;
use crate::features::Value;

/// Fixed leading columns of the CSV export.
pub const CSV_PREFIX: [&str; 9] =
    ["detection_id", "frame", "track_id", "x_min", "y_min", "x_max", "y_max", "confidence", "provenance"];

/// Shortest decimal form of `v` rounded to 9 significant digits.
pub fn format_number(v: f64) -> String {
    if !v.is_finite() {
        return String::new();
    }
    let rounded: f64 = format!("{v:.8e}").parse().expect("formatted float parses");
    if rounded == 0.0 {
        return "0".into();
    }
    rounded.to_string()
}

/// One row per record (visible ones only unless `include_hidden`), in ID
/// order: the fixed prefix, feature columns in registry order, then
/// `ann:<kind>:<name>` columns. RFC 4180 quoting, LF line endings.
pub fn export_csv(session: &Session, include_hidden: bool) -> String {
    let feature_cols: Vec<&str> = session.features.columns().iter().map(|c| c.name.as_str()).collect();
    let ann_cols = session.annotations.columns();
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let header: Vec<&str> =
        CSV_PREFIX.iter().copied().chain(feature_cols.iter().copied()).chain(ann_cols.iter().map(String::as_str)).collect();
    w.write_record(&header).expect("in-memory write");

    let mut anns: std::collections::BTreeMap<(crate::detection::DetectionId, String), String> = Default::default();
    for a in session.annotations.iter() {
        let cell = match &a.payload {
            Payload::Number(v) => format_number(*v),
            other => other.to_cell(),
        };
        anns.insert((a.detection_id, a.column()), cell);
    }
    for r in session.records.values() {
        if !include_hidden && session.hidden.contains(&r.detection_id) {
            continue;
        }
        let mut row: Vec<String> = vec![
            r.detection_id.0.to_string(),
            r.frame_index.to_string(),
            r.track_id.map(|t| t.to_string()).unwrap_or_default(),
            r.bbox.x_min.to_string(),
            r.bbox.y_min.to_string(),
            r.bbox.x_max.to_string(),
            r.bbox.y_max.to_string(),
            format_number(r.confidence),
            r.provenance.as_str().to_string(),
        ];
        for c in &feature_cols {
            row.push(match session.features.get(r.detection_id, c) {
                Some(Value::Number(v)) => format_number(*v),
                Some(Value::Text(t)) => t.clone(),
                None => String::new(),
            });
        }
        for c in &ann_cols {
            row.push(anns.get(&(r.detection_id, c.clone())).cloned().unwrap_or_default());
        }
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}
