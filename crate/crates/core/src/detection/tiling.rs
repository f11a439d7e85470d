/// Window origins along one axis for sliding windows with 50% overlap.
///
/// The stride is `window / 2`. Origins step by the stride while the window
/// still ends before `extent`; the last origin is pinned to `extent - window`
/// so the final window ends exactly at the border. When the window is at least
/// as large as the extent there is a single origin 0 and the window is clipped.
pub fn tile_positions(extent: usize, window: usize) -> Vec<usize> {
    if window >= extent {
        return vec![0];
    }
    let stride = (window / 2).max(1);
    let mut origins = Vec::new();
    let mut origin = 0;
    while origin + window < extent {
        origins.push(origin);
        origin += stride;
    }
    let last = extent.saturating_sub(window);
    if origins.last() != Some(&last) {
        origins.push(last);
    }
    origins
}
