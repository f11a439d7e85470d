use crate::geometry::Rect;
use crate::imaging::{label_components, otsu_threshold, BinaryMask, Frame};

use super::Segmenter;
use crate::detection::BackendError;

/// Threshold-based bbox-prompted segmenter used without external models.
///
/// Otsu on crop luminance; the class whose pixels lie closer to the crop
/// center (on average) is foreground; of its 8-connected components the one
/// overlapping the prompt's central 50% region the most is returned.
pub fn classical_segment(crop: &Frame, prompt: &Rect) -> BinaryMask {
    let (w, h) = (crop.width(), crop.height());
    let mut out = BinaryMask::new(w, h);
    let lum = crop.luminance();
    let Some(t) = otsu_threshold(&lum) else {
        return out;
    };
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let mut dist = [0f64; 2];
    let mut count = [0usize; 2];
    for (i, &v) in lum.iter().enumerate() {
        let class = usize::from(v > t);
        let (px, py) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
        dist[class] += (px - cx).hypot(py - cy);
        count[class] += 1;
    }
    if count[0] == 0 || count[1] == 0 {
        return out;
    }
    let upper_is_fg = dist[1] / count[1] as f64 <= dist[0] / count[0] as f64;
    let fg: Vec<bool> = lum.iter().map(|&v| (v > t) == upper_is_fg).collect();
    let comps = label_components(w, h, &fg);

    let (pw, ph) = (prompt.width() as f64, prompt.height() as f64);
    let center = (
        prompt.x_min as f64 + 0.25 * pw,
        prompt.y_min as f64 + 0.25 * ph,
        prompt.x_max as f64 - 0.25 * pw,
        prompt.y_max as f64 - 0.25 * ph,
    );
    let mut overlap = vec![0usize; comps.sizes.len()];
    for (i, &label) in comps.labels.iter().enumerate() {
        if label == 0 {
            continue;
        }
        let (px, py) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
        if px >= center.0 && px < center.2 && py >= center.1 && py < center.3 {
            overlap[label as usize - 1] += 1;
        }
    }
    let Some((best, &n)) = overlap.iter().enumerate().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0))) else {
        return out;
    };
    if n == 0 {
        return out;
    }
    let label = best as u32 + 1;
    for (d, &l) in out.data.iter_mut().zip(&comps.labels) {
        *d = l == label;
    }
    out
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ClassicalSegmenter;

impl Segmenter for ClassicalSegmenter {
    fn segment(&self, crop: &Frame, prompt: &Rect) -> Result<BinaryMask, BackendError> {
        Ok(classical_segment(crop, prompt))
    }
}
