use crate::geometry::{Point, Rect};

use super::{label_components, ImagingError, Result};

/// A boolean raster placed at `origin` in image coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub origin: (i64, i64),
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, origin: (0, 0), data: vec![false; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.data[y * width + x] = f(x, y);
            }
        }
        m
    }

    pub fn with_origin(mut self, x: i64, y: i64) -> Self {
        self.origin = (x, y);
        self
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// Extent in image coordinates.
    pub fn bounds(&self) -> Rect {
        Rect::new(self.origin.0, self.origin.1, self.origin.0 + self.width as i64, self.origin.1 + self.height as i64)
    }

    /// Image coordinates of every set pixel, in raster order.
    pub fn pixels(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        self.data.iter().enumerate().filter(|(_, &v)| v).map(move |(i, _)| {
            (self.origin.0 + (i % self.width) as i64, self.origin.1 + (i / self.width) as i64)
        })
    }
}

/// Shoelace signed area; positive for the orientation produced by [`trace_contour`].
pub fn signed_area(vertices: &[Point]) -> f64 {
    let n = vertices.len();
    let mut s = 0.0;
    for i in 0..n {
        let (a, b) = (vertices[i], vertices[(i + 1) % n]);
        s += a.x * b.y - b.x * a.y;
    }
    s / 2.0
}

/// Even-odd fill of a closed polygon sampled at pixel centers over `bounds`.
///
/// Pixel `(c, r)` of the result corresponds to image pixel
/// `(bounds.x_min + c, bounds.y_min + r)` and is set iff its center lies inside
/// the polygon.
pub fn rasterize_polygon(vertices: &[Point], bounds: &Rect) -> Result<BinaryMask> {
    if vertices.len() < 3 {
        return Err(ImagingError::DegeneratePolygon(vertices.len()));
    }
    let (w, h) = (bounds.width() as usize, bounds.height() as usize);
    let mut mask = BinaryMask::new(w, h).with_origin(bounds.x_min, bounds.y_min);
    let n = vertices.len();
    let mut crossings = Vec::new();
    for r in 0..h {
        let y = (bounds.y_min + r as i64) as f64 + 0.5;
        crossings.clear();
        let mut j = n - 1;
        for i in 0..n {
            let (pi, pj) = (vertices[i], vertices[j]);
            if (pi.y > y) != (pj.y > y) {
                crossings.push((pj.x - pi.x) * (y - pi.y) / (pj.y - pi.y) + pi.x);
            }
            j = i;
        }
        crossings.sort_by(f64::total_cmp);
        for pair in crossings.chunks_exact(2) {
            // centers x with pair[0] <= x < pair[1]
            let start = (pair[0] - bounds.x_min as f64 - 0.5).ceil().max(0.0) as usize;
            let end = ((pair[1] - bounds.x_min as f64 - 0.5).ceil().max(0.0) as usize).min(w);
            for c in start..end {
                mask.data[r * w + c] = true;
            }
        }
    }
    Ok(mask)
}

/// Outer boundary of the largest 8-connected component of `mask`.
///
/// The contour follows pixel edges, so vertices sit on integer pixel corners in
/// image coordinates. Collinear runs are merged, holes are ignored, and the
/// vertex order has positive [`signed_area`].
pub fn trace_contour(mask: &BinaryMask) -> Result<Vec<Point>> {
    let comps = label_components(mask.width, mask.height, &mask.data);
    let largest = comps.largest().ok_or(ImagingError::EmptyMask)?;
    let label = largest as u32 + 1;
    let (w, h) = (mask.width as i64, mask.height as i64);
    let inside = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && comps.labels[(y * w + x) as usize] == label;

    let start_idx = comps.labels.iter().position(|&l| l == label).expect("component has pixels");
    let start = ((start_idx as i64) % w, (start_idx as i64) / w);
    // Walk with the component on the right-hand side, starting east along
    // the top edge of the first pixel in raster order.
    let (mut cx, mut cy) = start;
    let (mut dx, mut dy) = (1i64, 0i64);
    let mut vertices = vec![Point::new((start.0 + mask.origin.0) as f64, (start.1 + mask.origin.1) as f64)];
    loop {
        cx += dx;
        cy += dy;
        // pixels ahead of the corner, left and right of the travel direction
        let (left, right) = match (dx, dy) {
            (1, 0) => ((cx, cy - 1), (cx, cy)),
            (0, 1) => ((cx, cy), (cx - 1, cy)),
            (-1, 0) => ((cx - 1, cy), (cx - 1, cy - 1)),
            _ => ((cx - 1, cy - 1), (cx, cy - 1)),
        };
        let (ndx, ndy) = if inside(left.0, left.1) {
            (dy, -dx)
        } else if inside(right.0, right.1) {
            (dx, dy)
        } else {
            (-dy, dx)
        };
        if (cx, cy) == start && (ndx, ndy) == (1, 0) {
            break;
        }
        if (ndx, ndy) != (dx, dy) {
            vertices.push(Point::new((cx + mask.origin.0) as f64, (cy + mask.origin.1) as f64));
        }
        dx = ndx;
        dy = ndy;
    }
    Ok(vertices)
}

/// Sets every background pixel not 4-connected to the mask border.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width, mask.height);
    let mut outside = vec![false; w * h];
    let mut stack = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if (x == 0 || y == 0 || x == w - 1 || y == h - 1) && !mask.get(x, y) {
                outside[y * w + x] = true;
                stack.push((x, y));
            }
        }
    }
    while let Some((x, y)) = stack.pop() {
        let mut visit = |nx: usize, ny: usize| {
            let i = ny * w + nx;
            if !mask.data[i] && !outside[i] {
                outside[i] = true;
                stack.push((nx, ny));
            }
        };
        if x > 0 {
            visit(x - 1, y);
        }
        if x + 1 < w {
            visit(x + 1, y);
        }
        if y > 0 {
            visit(x, y - 1);
        }
        if y + 1 < h {
            visit(x, y + 1);
        }
    }
    let mut out = mask.clone();
    for (d, o) in out.data.iter_mut().zip(outside) {
        *d = !o;
    }
    out
}
