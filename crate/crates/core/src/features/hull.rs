use crate::imaging::BinaryMask;

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Convex hull (monotone chain), counter-clockwise, without collinear points.
pub fn convex_hull(mut pts: Vec<(i64, i64)>) -> Vec<(i64, i64)> {
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<(i64, i64)> = Vec::with_capacity(pts.len() * 2);
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(i64, i64)>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 { a.abs() } else { gcd(b, a % b) }
}

/// Number of pixels whose centers lie inside or on the convex hull of the
/// mask's pixel centers.
pub fn convex_area(mask: &BinaryMask) -> usize {
    let pts: Vec<(i64, i64)> = mask.pixels().collect();
    let hull = convex_hull(pts);
    match hull.len() {
        0 => 0,
        1 => 1,
        2 => {
            let (a, b) = (hull[0], hull[1]);
            (gcd(b.0 - a.0, b.1 - a.1) + 1) as usize
        }
        _ => {
            let (x0, y0) = (hull.iter().map(|p| p.0).min().unwrap(), hull.iter().map(|p| p.1).min().unwrap());
            let (x1, y1) = (hull.iter().map(|p| p.0).max().unwrap(), hull.iter().map(|p| p.1).max().unwrap());
            let n = hull.len();
            let mut count = 0;
            for y in y0..=y1 {
                for x in x0..=x1 {
                    if (0..n).all(|i| cross(hull[i], hull[(i + 1) % n], (x, y)) >= 0) {
                        count += 1;
                    }
                }
            }
            count
        }
    }
}
