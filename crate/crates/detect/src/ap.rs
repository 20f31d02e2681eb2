//! Average precision: area under the monotone precision-recall envelope,
//! integrated exactly over recall (all-points interpolation, not 11-point).

/// Computes AP from TP/FP labels ordered by descending score.
///
/// With `n_gt == 0` every detection is a false positive and the area is 0;
/// callers skip classes that have neither ground truths nor detections.
pub fn average_precision(labels: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 || labels.is_empty() {
        return 0.0;
    }
    // Cumulative precision/recall points after each detection.
    let mut points = Vec::with_capacity(labels.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &is_tp in labels {
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        points.push((
            tp as f64 / n_gt as f64,
            tp as f64 / (tp + fp) as f64,
        ));
    }
    // Monotone envelope: right-to-left running max of precision.
    let mut envelope = vec![0.0; points.len()];
    let mut run = 0.0f64;
    for i in (0..points.len()).rev() {
        run = run.max(points[i].1);
        envelope[i] = run;
    }
    // Exact integral over recall.
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (i, &(recall, _)) in points.iter().enumerate() {
        if recall > prev_recall {
            ap += (recall - prev_recall) * envelope[i];
            prev_recall = recall;
        }
    }
    ap
}
