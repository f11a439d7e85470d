const BINS: usize = 256;

/// Otsu's threshold over a 256-bin histogram spanning `[min, max]` of `values`.
///
/// Returns `None` when all values are equal (no class separation). Pixels
/// strictly greater than the returned value form the upper class.
pub fn otsu_threshold(values: &[f32]) -> Option<f32> {
    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if values.is_empty() || hi <= lo {
        return None;
    }
    let width = (hi - lo) as f64 / BINS as f64;
    let mut hist = [0u64; BINS];
    for &v in values {
        let b = (((v - lo) as f64 / width) as usize).min(BINS - 1);
        hist[b] += 1;
    }
    let center = |b: usize| lo as f64 + (b as f64 + 0.5) * width;
    let total: u64 = hist.iter().sum();
    let sum_all: f64 = hist.iter().enumerate().map(|(b, &n)| n as f64 * center(b)).sum();

    let (mut w0, mut sum0) = (0u64, 0f64);
    let mut best = (f64::NEG_INFINITY, 0usize);
    for b in 0..BINS - 1 {
        w0 += hist[b];
        sum0 += hist[b] as f64 * center(b);
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let m0 = sum0 / w0 as f64;
        let m1 = (sum_all - sum0) / w1 as f64;
        let between = w0 as f64 * w1 as f64 * (m0 - m1) * (m0 - m1);
        if between > best.0 {
            best = (between, b);
        }
    }
    // Upper edge of the best lower-class bin.
    Some((lo as f64 + (best.1 as f64 + 1.0) * width) as f32)
}
