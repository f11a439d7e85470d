use crate::geometry::Point;
use crate::imaging::signed_area;

/// Largest relative area change a simplification may introduce.
const MAX_AREA_CHANGE: f64 = 0.02;

/// Douglas–Peucker simplification of a closed polygon.
///
/// The ring is split at vertex 0 and the vertex farthest from it, and each
/// chain is simplified independently. A non-positive tolerance returns the
/// input unchanged. When the result would have fewer than 3 vertices, or its
/// area would move by more than 2%, the input is returned unsimplified.
pub fn simplify_polygon(vertices: &[Point], tolerance: f64) -> Vec<Point> {
    let n = vertices.len();
    if tolerance <= 0.0 || n < 4 {
        return vertices.to_vec();
    }
    let far = (1..n)
        .max_by(|&a, &b| vertices[0].distance(&vertices[a]).total_cmp(&vertices[0].distance(&vertices[b])))
        .expect("n >= 4");
    let mut keep = vec![false; n];
    keep[0] = true;
    keep[far] = true;
    let ring: Vec<Point> = vertices.iter().chain(std::iter::once(&vertices[0])).copied().collect();
    mark(&ring, 0, far, tolerance, &mut keep);
    mark(&ring, far, n, tolerance, &mut keep);

    let out: Vec<Point> = vertices.iter().zip(&keep).filter(|(_, &k)| k).map(|(p, _)| *p).collect();
    if out.len() < 3 {
        return vertices.to_vec();
    }
    let before = signed_area(vertices).abs();
    let after = signed_area(&out).abs();
    if before > 0.0 && ((after - before) / before).abs() > MAX_AREA_CHANGE {
        return vertices.to_vec();
    }
    out
}

fn mark(ring: &[Point], start: usize, end: usize, tolerance: f64, keep: &mut [bool]) {
    let mut stack = vec![(start, end)];
    while let Some((a, b)) = stack.pop() {
        if b <= a + 1 {
            continue;
        }
        let (mut best, mut best_d) = (a, -1.0);
        for i in a + 1..b {
            let d = segment_distance(ring[i], ring[a], ring[b]);
            if d > best_d {
                best = i;
                best_d = d;
            }
        }
        if best_d > tolerance {
            keep[best % keep.len()] = true;
            stack.push((a, best));
            stack.push((best, b));
        }
    }
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return p.distance(&a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    p.distance(&Point::new(a.x + t * dx, a.y + t * dy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rect;
    use crate::imaging::rasterize_polygon;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_tolerance_is_identity() {
        let p = vec![Point::new(0., 0.), Point::new(1., 0.), Point::new(2., 0.), Point::new(2., 2.)];
        assert_eq!(simplify_polygon(&p, 0.0), p);
    }

    #[test]
    fn triangle_unchanged() {
        let t = vec![Point::new(0., 0.), Point::new(4., 0.), Point::new(0., 4.)];
        assert_eq!(simplify_polygon(&t, 1.0), t);
    }

    #[test]
    fn collinear_points_removed() {
        let p = vec![
            Point::new(0., 0.),
            Point::new(5., 0.),
            Point::new(10., 0.),
            Point::new(10., 10.),
            Point::new(0., 10.),
        ];
        assert_eq!(simplify_polygon(&p, 0.5).len(), 4);
    }

    #[test]
    fn noisy_circle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (cx, cy, r) = (150.0, 150.0, 100.0);
        let circle: Vec<Point> = (0..1000)
            .map(|i| {
                let a = i as f64 / 1000.0 * std::f64::consts::TAU;
                let rr = r + rng.gen_range(-0.3..0.3);
                Point::new(cx + rr * a.cos(), cy + rr * a.sin())
            })
            .collect();
        let simple = simplify_polygon(&circle, 1.0);
        assert!(simple.len() <= 100, "{} vertices", simple.len());
        let bounds = Rect::new(0, 0, 300, 300);
        let a0 = rasterize_polygon(&circle, &bounds).unwrap().count() as f64;
        let a1 = rasterize_polygon(&simple, &bounds).unwrap().count() as f64;
        assert!(((a1 - a0) / a0).abs() <= 0.02, "{a0} vs {a1}");
    }
}
