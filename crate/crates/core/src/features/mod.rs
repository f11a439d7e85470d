//! Per-organoid features: geometry from the primary mask, intensity statistics
//! and moment-derived shape descriptors for every channel, and ruler lengths.

mod hull;
mod moments;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{DetectionId, DetectionRecord};
use crate::geometry::Point;
use crate::imaging::{BinaryMask, Frame, ImageStack, ImagingError, SignalChannel};
use crate::segmentation::{PolygonMask, PRIMARY_CHANNEL};

pub use hull::{convex_area, convex_hull};
pub use moments::MomentSet;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("degenerate polygon: {0}")]
    Degenerate(String),
    #[error("mask is empty")]
    EmptyMask,
    #[error("a ruler needs at least 2 points, got {0}")]
    ShortRuler(usize),
}

impl From<ImagingError> for FeatureError {
    fn from(e: ImagingError) -> Self {
        FeatureError::Degenerate(e.to_string())
    }
}

/// Masks keyed by `(detection_id, channel_name)`.
pub type MaskMap = BTreeMap<(DetectionId, String), PolygonMask>;

/// One table cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Number(f64),
    Text(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Number(v) => Some(*v),
            Value::Text(_) => None,
        }
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Number(v)
    }
}

/// Column type tags of the feature registry.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", content = "channel", rename_all = "snake_case")]
pub enum ColumnKind {
    Geometric,
    Intensity(String),
    Regionprops(String),
    Annotation,
    Predicted,
}

impl fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnKind::Geometric => f.write_str("geometric"),
            ColumnKind::Intensity(c) => write!(f, "intensity:{c}"),
            ColumnKind::Regionprops(c) => write!(f, "regionprops:{c}"),
            ColumnKind::Annotation => f.write_str("annotation"),
            ColumnKind::Predicted => f.write_str("predicted"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

/// Detection-ID-indexed table of named values with an ordered column registry.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    columns: Vec<Column>,
    rows: BTreeMap<DetectionId, BTreeMap<String, Value>>,
}

impl FeatureTable {
    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    /// Adds a column at the end of the registry unless it already exists.
    pub fn register(&mut self, name: &str, kind: ColumnKind) {
        if self.column(name).is_none() {
            self.columns.push(Column { name: name.to_string(), kind });
        }
    }

    pub fn ensure_row(&mut self, id: DetectionId) {
        self.rows.entry(id).or_default();
    }

    pub fn set(&mut self, id: DetectionId, name: &str, value: Value) {
        debug_assert!(self.column(name).is_some(), "unregistered column {name}");
        self.rows.entry(id).or_default().insert(name.to_string(), value);
    }

    pub fn clear(&mut self, id: DetectionId, name: &str) {
        if let Some(row) = self.rows.get_mut(&id) {
            row.remove(name);
        }
    }

    pub fn get(&self, id: DetectionId, name: &str) -> Option<&Value> {
        self.rows.get(&id)?.get(name)
    }

    pub fn number(&self, id: DetectionId, name: &str) -> Option<f64> {
        self.get(id, name).and_then(Value::as_f64)
    }

    pub fn row(&self, id: DetectionId) -> Option<&BTreeMap<String, Value>> {
        self.rows.get(&id)
    }

    pub fn rows(&self) -> impl Iterator<Item = (&DetectionId, &BTreeMap<String, Value>)> {
        self.rows.iter()
    }

    pub fn remove_row(&mut self, id: DetectionId) {
        self.rows.remove(&id);
    }

    pub fn retain_rows(&mut self, keep: impl Fn(DetectionId) -> bool) {
        self.rows.retain(|id, _| keep(*id));
    }

    /// Writes a computation into the table. Every column the computation
    /// produced is overwritten for the computed rows (cells it left absent
    /// become absent); other columns are untouched.
    pub fn merge(&mut self, computed: &FeatureComputation) {
        for c in &computed.columns {
            self.register(&c.name, c.kind.clone());
        }
        for (id, values) in &computed.rows {
            let row = self.rows.entry(*id).or_default();
            for c in &computed.columns {
                match values.get(&c.name) {
                    Some(v) => row.insert(c.name.clone(), Value::Number(*v)),
                    None => row.remove(&c.name),
                };
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricFeatures {
    pub area: f64,
    pub perimeter: f64,
    pub roundness: f64,
}

/// Area from the pixel-center rasterization, perimeter from the polygon arc
/// length, roundness `4 pi A / P^2` clamped to `[0, 1]`. Lengths are scaled
/// by `pixel_scale` when given.
pub fn geometric_features(mask: &PolygonMask, pixel_scale: Option<f64>) -> Result<GeometricFeatures, FeatureError> {
    let raster = mask.rasterize()?;
    let s = pixel_scale.unwrap_or(1.0);
    let area = raster.count() as f64 * s * s;
    let perimeter = polyline_length(&mask.vertices, true) * s;
    if area == 0.0 || perimeter == 0.0 {
        return Err(FeatureError::Degenerate("zero area or perimeter".into()));
    }
    let roundness = (4.0 * PI * area / (perimeter * perimeter)).clamp(0.0, 1.0);
    Ok(GeometricFeatures { area, perimeter, roundness })
}

fn polyline_length(points: &[Point], closed: bool) -> f64 {
    let mut len: f64 = points.windows(2).map(|w| w[0].distance(&w[1])).sum();
    if closed && points.len() > 2 {
        len += points[points.len() - 1].distance(&points[0]);
    }
    len
}

/// Sum of segment lengths of an open polyline, scaled by `pixel_scale`.
pub fn ruler_length(points: &[Point], pixel_scale: Option<f64>) -> Result<f64, FeatureError> {
    if points.len() < 2 {
        return Err(FeatureError::ShortRuler(points.len()));
    }
    Ok(polyline_length(points, false) * pixel_scale.unwrap_or(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityFeatures {
    pub mean_intensity: f64,
    pub total_intensity: f64,
    pub min: f64,
    pub max: f64,
    pub std: f64,
}

/// Statistics of the (luminance) values at pixel centers inside `mask`.
pub fn intensity_features(mask: &BinaryMask, channel: &Frame) -> Result<IntensityFeatures, FeatureError> {
    let (w, h) = (channel.width() as i64, channel.height() as i64);
    let values: Vec<f64> = mask
        .pixels()
        .filter(|&(x, y)| x >= 0 && y >= 0 && x < w && y < h)
        .map(|(x, y)| channel.luminance_at(x as usize, y as usize) as f64)
        .collect();
    if values.is_empty() {
        return Err(FeatureError::EmptyMask);
    }
    let n = values.len() as f64;
    let total: f64 = values.iter().sum();
    let mean = total / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(IntensityFeatures {
        mean_intensity: mean,
        total_intensity: total,
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        std: var.sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionProps {
    pub eccentricity: f64,
    pub solidity: f64,
    pub extent: f64,
    pub major_axis_length: f64,
    pub minor_axis_length: f64,
    pub orientation: f64,
}

/// Moment-derived shape descriptors of a raster mask (lengths in pixels).
pub fn regionprops_features(mask: &BinaryMask) -> Result<RegionProps, FeatureError> {
    let m = MomentSet::of(mask).ok_or(FeatureError::EmptyMask)?;
    let area = m.m00;
    let (mut x0, mut y0, mut x1, mut y1) = (i64::MAX, i64::MAX, i64::MIN, i64::MIN);
    for (x, y) in mask.pixels() {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x + 1);
        y1 = y1.max(y + 1);
    }
    let bbox_area = ((x1 - x0) * (y1 - y0)) as f64;
    Ok(RegionProps {
        eccentricity: m.eccentricity(),
        solidity: area / convex_area(mask) as f64,
        extent: area / bbox_area,
        major_axis_length: m.major_axis_length(),
        minor_axis_length: m.minor_axis_length(),
        orientation: m.orientation(),
    })
}

pub const GEOMETRIC_COLUMNS: [&str; 3] = ["area", "perimeter", "roundness"];
pub const INTENSITY_COLUMNS: [&str; 5] =
    ["mean_intensity", "total_intensity", "min_intensity", "max_intensity", "std_intensity"];
pub const REGIONPROPS_COLUMNS: [&str; 6] =
    ["eccentricity", "solidity", "extent", "major_axis_length", "minor_axis_length", "orientation"];

/// Result of [`compute_all`]: new columns and values, ready to merge.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureComputation {
    pub columns: Vec<Column>,
    pub rows: BTreeMap<DetectionId, BTreeMap<String, f64>>,
    /// `(detection, channel)` pairs measured with the primary mask because
    /// the channel mask was absent.
    pub fallbacks: Vec<(DetectionId, String)>,
    /// Per-record failures; the affected cells stay absent.
    pub errors: Vec<(DetectionId, String)>,
}

fn column_set(channels: &[&str]) -> Vec<Column> {
    let mut cols: Vec<Column> =
        GEOMETRIC_COLUMNS.iter().map(|n| Column { name: n.to_string(), kind: ColumnKind::Geometric }).collect();
    for ch in channels {
        cols.extend(INTENSITY_COLUMNS.iter().map(|n| Column {
            name: format!("{n}:{ch}"),
            kind: ColumnKind::Intensity(ch.to_string()),
        }));
        cols.extend(REGIONPROPS_COLUMNS.iter().map(|n| Column {
            name: format!("{n}:{ch}"),
            kind: ColumnKind::Regionprops(ch.to_string()),
        }));
    }
    cols
}

/// Geometry from each record's primary mask, plus intensity and regionprops
/// for every channel (primary first). A channel without its own mask is
/// measured with the primary mask and reported as a fallback.
pub fn compute_all(
    records: &[DetectionRecord],
    masks: &MaskMap,
    primary: &ImageStack,
    channels: &[SignalChannel],
) -> FeatureComputation {
    let names: Vec<&str> = std::iter::once(PRIMARY_CHANNEL).chain(channels.iter().map(|c| c.name.as_str())).collect();
    let stacks: Vec<&ImageStack> = std::iter::once(primary).chain(channels.iter().map(|c| &c.stack)).collect();
    let scale = primary.pixel_scale();
    let mut out = FeatureComputation { columns: column_set(&names), ..Default::default() };

    for r in records {
        let row = out.rows.entry(r.detection_id).or_default();
        let Some(primary_mask) = masks.get(&(r.detection_id, PRIMARY_CHANNEL.to_string())) else {
            continue;
        };
        match geometric_features(primary_mask, scale) {
            Ok(g) => {
                row.insert("area".into(), g.area);
                row.insert("perimeter".into(), g.perimeter);
                row.insert("roundness".into(), g.roundness);
            }
            Err(e) => out.errors.push((r.detection_id, e.to_string())),
        }
        for (name, stack) in names.iter().zip(&stacks) {
            let own = masks.get(&(r.detection_id, name.to_string()));
            let poly = match own {
                Some(m) => m,
                None => {
                    out.fallbacks.push((r.detection_id, name.to_string()));
                    primary_mask
                }
            };
            let Some(frame) = stack.frame(r.frame_index) else {
                out.errors.push((r.detection_id, format!("frame {} missing in {name}", r.frame_index)));
                continue;
            };
            let raster = match poly.rasterize() {
                Ok(m) => m,
                Err(e) => {
                    out.errors.push((r.detection_id, e.to_string()));
                    continue;
                }
            };
            match intensity_features(&raster, frame) {
                Ok(i) => {
                    let vals = [i.mean_intensity, i.total_intensity, i.min, i.max, i.std];
                    for (col, v) in INTENSITY_COLUMNS.iter().zip(vals) {
                        row.insert(format!("{col}:{name}"), v);
                    }
                }
                Err(e) => out.errors.push((r.detection_id, e.to_string())),
            }
            match regionprops_features(&raster) {
                Ok(p) => {
                    let s = scale.unwrap_or(1.0);
                    let vals = [
                        p.eccentricity,
                        p.solidity,
                        p.extent,
                        p.major_axis_length * s,
                        p.minor_axis_length * s,
                        p.orientation,
                    ];
                    for (col, v) in REGIONPROPS_COLUMNS.iter().zip(vals) {
                        row.insert(format!("{col}:{name}"), v);
                    }
                }
                Err(e) => out.errors.push((r.detection_id, e.to_string())),
            }
        }
    }
    out
}
