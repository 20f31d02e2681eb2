//! Dataset-level evaluation: per-class AP across IoU thresholds, with the
//! COCO-style headline numbers (AP averaged over 0.50:0.05:0.95, AP50, AP75).

use std::collections::BTreeSet;

use serde::Serialize;

use crate::ap::average_precision;
use crate::bbox::{Detection, GroundTruthBox};
use crate::error::{DetectError, Result};
use crate::matching::match_detections;

/// The ten COCO thresholds 0.50:0.05:0.95, as exact literals.
pub const COCO_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

#[derive(Debug, Clone, Serialize)]
pub struct ClassEval {
    pub class_id: u32,
    pub n_ground_truth: usize,
    pub n_detections: usize,
    /// `(threshold, ap)` pairs, ascending by threshold.
    pub ap_by_threshold: Vec<(f64, f64)>,
}

impl ClassEval {
    pub fn ap_at(&self, threshold: f64) -> Option<f64> {
        self.ap_by_threshold
            .iter()
            .find(|(t, _)| *t == threshold)
            .map(|(_, ap)| *ap)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    /// Mean over classes and over the ten COCO thresholds.
    pub ap: f64,
    /// Mean over classes at IoU 0.50.
    pub ap50: f64,
    /// Mean over classes at IoU 0.75.
    pub ap75: f64,
    pub thresholds: Vec<f64>,
    pub classes: Vec<ClassEval>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Evaluates detections against ground truths.
///
/// `extra_thresholds` extends the per-class table beyond the COCO set; the
/// headline numbers always come from the COCO thresholds. Classes that
/// appear in neither set are naturally absent from the means; classes with
/// ground truths but no detections contribute AP 0.
pub fn evaluate(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    extra_thresholds: &[f64],
) -> Result<EvalReport> {
    if gts.is_empty() {
        return Err(DetectError::EmptyGroundTruth);
    }
    let mut thresholds: Vec<f64> = COCO_THRESHOLDS.to_vec();
    for &t in extra_thresholds {
        if !thresholds.contains(&t) {
            thresholds.push(t);
        }
    }
    thresholds.sort_by(|a, b| a.partial_cmp(b).expect("finite thresholds"));

    let class_ids: BTreeSet<u32> = gts
        .iter()
        .map(|g| g.class_id)
        .chain(dets.iter().map(|d| d.class_id))
        .collect();

    let jobs: Vec<(u32, Vec<Detection>, Vec<GroundTruthBox>)> = class_ids
        .into_iter()
        .map(|class_id| {
            let class_dets: Vec<Detection> = dets
                .iter()
                .filter(|d| d.class_id == class_id)
                .cloned()
                .collect();
            let class_gts: Vec<GroundTruthBox> = gts
                .iter()
                .filter(|g| g.class_id == class_id)
                .cloned()
                .collect();
            (class_id, class_dets, class_gts)
        })
        .collect();

    let eval_class = |(class_id, class_dets, class_gts): &(u32, Vec<Detection>, Vec<GroundTruthBox>)| {
        let ap_by_threshold: Vec<(f64, f64)> = thresholds
            .iter()
            .map(|&thr| {
                let outcome = match_detections(class_dets, class_gts, thr);
                (thr, average_precision(&outcome.labels, class_gts.len()))
            })
            .collect();
        ClassEval {
            class_id: *class_id,
            n_ground_truth: class_gts.len(),
            n_detections: class_dets.len(),
            ap_by_threshold,
        }
    };

    #[cfg(feature = "parallel")]
    let classes: Vec<ClassEval> = {
        use rayon::prelude::*;
        jobs.par_iter().map(eval_class).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let classes: Vec<ClassEval> = jobs.iter().map(eval_class).collect();

    let mean_at = |thr: f64| -> f64 {
        let sum: f64 = classes.iter().map(|c| c.ap_at(thr).unwrap_or(0.0)).sum();
        sum / classes.len() as f64
    };
    let ap50 = mean_at(0.50);
    let ap75 = mean_at(0.75);
    let ap = COCO_THRESHOLDS.iter().map(|&t| mean_at(t)).sum::<f64>() / COCO_THRESHOLDS.len() as f64;

    Ok(EvalReport {
        ap,
        ap50,
        ap75,
        thresholds,
        classes,
    })
}
