use crate::geometry::Rect;
use crate::imaging::{label_components, otsu_threshold, Frame};

use super::{BackendError, Detector, ScoredBox};

/// Components smaller than this many pixels are ignored.
pub const MIN_COMPONENT_AREA: usize = 25;

/// Threshold-and-label detector used when no external model is configured.
///
/// Otsu threshold on the tile luminance; the minority pixel class is
/// foreground; each 8-connected component of at least
/// [`MIN_COMPONENT_AREA`] pixels yields its bounding box with confidence
/// `area / (0.25 * tile_area)` clamped to `[0, 1]`.
pub fn classical_detect(tile: &Frame) -> Vec<ScoredBox> {
    let (w, h) = (tile.width(), tile.height());
    let lum = tile.luminance();
    let Some(fg) = foreground(&lum) else {
        return Vec::new();
    };
    let comps = label_components(w, h, &fg);
    let tile_area = (w * h) as f64;
    comps
        .sizes
        .iter()
        .enumerate()
        .filter(|(_, &size)| size >= MIN_COMPONENT_AREA)
        .map(|(i, &size)| {
            let (x0, y0, x1, y1) = comps.bbox(i);
            ScoredBox {
                rect: Rect::new(x0 as i64, y0 as i64, x1 as i64, y1 as i64),
                confidence: (size as f64 / (0.25 * tile_area)).clamp(0.0, 1.0),
            }
        })
        .collect()
}

/// Otsu split with the minority class as foreground (bright class on ties).
fn foreground(lum: &[f32]) -> Option<Vec<bool>> {
    let t = otsu_threshold(lum)?;
    let upper = lum.iter().filter(|&&v| v > t).count();
    let bright_is_fg = upper * 2 <= lum.len();
    Some(lum.iter().map(|&v| (v > t) == bright_is_fg).collect())
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ClassicalDetector;

impl Detector for ClassicalDetector {
    fn detect(&self, tile: &Frame) -> Result<Vec<ScoredBox>, BackendError> {
        Ok(classical_detect(tile))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tile_with_squares(squares: &[(usize, usize, usize)]) -> Frame {
        let mut px = vec![0f32; 100 * 100];
        for &(x0, y0, s) in squares {
            for y in y0..y0 + s {
                for x in x0..x0 + s {
                    px[y * 100 + x] = 1.0;
                }
            }
        }
        Frame::gray(100, 100, px).unwrap()
    }

    #[test]
    fn uniform_tile_is_empty() {
        assert!(classical_detect(&Frame::gray(50, 50, vec![0.4; 2500]).unwrap()).is_empty());
    }

    #[test]
    fn one_square() {
        let found = classical_detect(&tile_with_squares(&[(30, 40, 20)]));
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].rect, Rect::new(30, 40, 50, 60));
        assert!((found[0].confidence - 0.16).abs() < 1e-12);
    }

    #[test]
    fn two_equal_squares() {
        let found = classical_detect(&tile_with_squares(&[(5, 5, 20), (60, 60, 20)]));
        assert_eq!(found.len(), 2);
        assert_eq!(found[0].confidence, found[1].confidence);
    }

    #[test]
    fn dark_object_on_bright_background() {
        let mut px = vec![1f32; 100 * 100];
        for y in 10..20 {
            for x in 10..20 {
                px[y * 100 + x] = 0.0;
            }
        }
        let found = classical_detect(&Frame::gray(100, 100, px).unwrap());
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].rect, Rect::new(10, 10, 20, 20));
    }

    #[test]
    fn tiny_components_are_dropped() {
        let found = classical_detect(&tile_with_squares(&[(5, 5, 4), (50, 50, 5)]));
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].rect, Rect::new(50, 50, 55, 55));
    }
}
