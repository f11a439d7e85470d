//! Shared geometric primitives.
//!
//! Coordinates follow image convention: `x` is the column, `y` the row, origin
//! top-left. Rectangles are half-open: `[x_min, x_max) × [y_min, y_max)`.

use serde::{Deserialize, Serialize};

/// A point in continuous image coordinates; serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl From<[f64; 2]> for Point {
    fn from(v: [f64; 2]) -> Self {
        Point::new(v[0], v[1])
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// Half-open, axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[i64; 4]", into = "[i64; 4]")]
pub struct Rect {
    pub x_min: i64,
    pub y_min: i64,
    pub x_max: i64,
    pub y_max: i64,
}

impl From<[i64; 4]> for Rect {
    fn from(v: [i64; 4]) -> Self {
        Rect::new(v[0], v[1], v[2], v[3])
    }
}

impl From<Rect> for [i64; 4] {
    fn from(r: Rect) -> Self {
        [r.x_min, r.y_min, r.x_max, r.y_max]
    }
}

impl Rect {
    pub const fn new(x_min: i64, y_min: i64, x_max: i64, y_max: i64) -> Self {
        Self { x_min, y_min, x_max, y_max }
    }

    pub fn width(&self) -> i64 {
        (self.x_max - self.x_min).max(0)
    }

    pub fn height(&self) -> i64 {
        (self.y_max - self.y_min).max(0)
    }

    pub fn area(&self) -> i64 {
        self.width() * self.height()
    }

    /// True when `x_min < x_max` and `y_min < y_max`.
    pub fn is_valid(&self) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max
    }

    pub fn center(&self) -> Point {
        Point::new(
            (self.x_min + self.x_max) as f64 / 2.0,
            (self.y_min + self.y_max) as f64 / 2.0,
        )
    }

    /// Center coordinates doubled, exact in integers.
    pub fn center2(&self) -> (i64, i64) {
        (self.x_min + self.x_max, self.y_min + self.y_max)
    }

    pub fn intersection(&self, other: &Rect) -> Option<Rect> {
        let r = Rect::new(
            self.x_min.max(other.x_min),
            self.y_min.max(other.y_min),
            self.x_max.min(other.x_max),
            self.y_max.min(other.y_max),
        );
        r.is_valid().then_some(r)
    }

    /// Whether `self` lies inside a `width × height` frame.
    pub fn within(&self, width: usize, height: usize) -> bool {
        self.is_valid()
            && self.x_min >= 0
            && self.y_min >= 0
            && self.x_max <= width as i64
            && self.y_max <= height as i64
    }

    pub fn contains_point(&self, p: Point) -> bool {
        p.x >= self.x_min as f64 && p.x < self.x_max as f64 && p.y >= self.y_min as f64 && p.y < self.y_max as f64
    }

    pub fn clamp_to(&self, width: usize, height: usize) -> Rect {
        Rect::new(
            self.x_min.clamp(0, width as i64),
            self.y_min.clamp(0, height as i64),
            self.x_max.clamp(0, width as i64),
            self.y_max.clamp(0, height as i64),
        )
    }

    pub fn translate(&self, dx: i64, dy: i64) -> Rect {
        Rect::new(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)
    }

    pub fn scale(&self, factor: i64) -> Rect {
        Rect::new(self.x_min * factor, self.y_min * factor, self.x_max * factor, self.y_max * factor)
    }
}

/// Intersection over union of two rectangles; 0 when disjoint or degenerate.
pub fn iou(a: &Rect, b: &Rect) -> f64 {
    let inter = a.intersection(b).map_or(0, |r| r.area());
    if inter == 0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}
