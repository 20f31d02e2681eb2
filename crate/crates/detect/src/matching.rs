//! Greedy score-ordered matching of detections to ground truths (the
//! standard PASCAL/COCO protocol).

use std::collections::HashMap;

use crate::bbox::{iou, Detection, GroundTruthBox};

/// Per-detection true/false-positive labels, in descending-score order.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    /// `labels[i]` says whether the i-th detection *by score* is a true positive.
    pub labels: Vec<bool>,
    /// `order[i]` is the original index of the i-th detection by score.
    pub order: Vec<usize>,
}

/// Matches detections of one class against ground truths of the same class.
///
/// Detections are processed in descending score (ties keep input order);
/// each one consumes the unmatched same-image ground truth of highest IoU
/// when that IoU reaches `iou_thr`, and is a false positive otherwise.
/// IoU ties go to the earliest ground truth in input order.
pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    iou_thr: f64,
) -> MatchOutcome {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    // Stable sort so equal scores keep input order.
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .expect("scores are finite")
    });

    let mut by_image: HashMap<&str, Vec<usize>> = HashMap::new();
    for (gi, gt) in gts.iter().enumerate() {
        by_image.entry(gt.image_id.as_str()).or_default().push(gi);
    }

    let mut consumed = vec![false; gts.len()];
    let mut labels = Vec::with_capacity(dets.len());
    for &di in &order {
        let det = &dets[di];
        let mut best: Option<(usize, f64)> = None;
        if let Some(candidates) = by_image.get(det.image_id.as_str()) {
            for &gi in candidates {
                if consumed[gi] {
                    continue;
                }
                let overlap = iou(&det.bbox, &gts[gi].bbox);
                // Strictly-greater keeps the earliest ground truth on ties.
                if best.map_or(true, |(_, b)| overlap > b) {
                    best = Some((gi, overlap));
                }
            }
        }
        match best {
            Some((gi, overlap)) if overlap >= iou_thr && overlap > 0.0 => {
                consumed[gi] = true;
                labels.push(true);
            }
            _ => labels.push(false),
        }
    }
    MatchOutcome { labels, order }
}
