use std::cmp::Ordering;

use crate::geometry::iou;

use super::ScoredBox;

/// Greedy non-maximum suppression.
///
/// Boxes are visited by descending confidence (equal confidences keep input
/// order); each kept box suppresses every remaining box whose IoU with it is
/// strictly greater than `iou_threshold`. Returns indices into `boxes` in
/// the order they were kept.
pub fn nms(boxes: &[ScoredBox], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        boxes[b].confidence.partial_cmp(&boxes[a].confidence).unwrap_or(Ordering::Equal).then(a.cmp(&b))
    });
    let mut suppressed = vec![false; boxes.len()];
    let mut kept = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        kept.push(i);
        for &j in &order[pos + 1..] {
            if !suppressed[j] && iou(&boxes[i].rect, &boxes[j].rect) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    kept
}
