use serde::{Deserialize, Serialize};

use crate::imaging::BinaryMask;

/// Zeroth moment, centroid and second central moments of a mask, in pixel
/// index coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSet {
    pub m00: f64,
    pub centroid: (f64, f64),
    pub mu20: f64,
    pub mu02: f64,
    pub mu11: f64,
}

impl MomentSet {
    /// `None` for an empty mask.
    pub fn of(mask: &BinaryMask) -> Option<Self> {
        let (mut n, mut sx, mut sy) = (0f64, 0f64, 0f64);
        for (x, y) in mask.pixels() {
            n += 1.0;
            sx += x as f64;
            sy += y as f64;
        }
        if n == 0.0 {
            return None;
        }
        let (cx, cy) = (sx / n, sy / n);
        let (mut mu20, mut mu02, mut mu11) = (0f64, 0f64, 0f64);
        for (x, y) in mask.pixels() {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            mu20 += dx * dx;
            mu02 += dy * dy;
            mu11 += dx * dy;
        }
        Some(Self { m00: n, centroid: (cx, cy), mu20, mu02, mu11 })
    }

    /// Eigenvalues of the normalized covariance, largest first.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let (a, c, b) = (self.mu20 / self.m00, self.mu02 / self.m00, self.mu11 / self.m00);
        let mean = (a + c) / 2.0;
        let root = (((a - c) / 2.0).powi(2) + b * b).sqrt();
        (mean + root, (mean - root).max(0.0))
    }

    pub fn major_axis_length(&self) -> f64 {
        4.0 * self.eigenvalues().0.sqrt()
    }

    pub fn minor_axis_length(&self) -> f64 {
        4.0 * self.eigenvalues().1.sqrt()
    }

    pub fn eccentricity(&self) -> f64 {
        let (l1, l2) = self.eigenvalues();
        if l1 <= 0.0 {
            return 0.0;
        }
        (1.0 - l2 / l1).max(0.0).sqrt()
    }

    /// `atan2(2 mu11, mu20 - mu02) / 2`, in `(-pi/2, pi/2]`.
    pub fn orientation(&self) -> f64 {
        0.5 * (2.0 * self.mu11).atan2(self.mu20 - self.mu02)
    }
}
