//! Detection-quality mathematics (IoU, greedy matching, average precision,
//! COCO-style mAP) plus GTSDB ground-truth and PPM image ingestion.

#![forbid(unsafe_code)]

pub mod ap;
pub mod bbox;
pub mod error;
pub mod evaluate;
pub mod gtsdb;
pub mod matching;
pub mod ppm;
pub mod records;

pub use ap::average_precision;
pub use bbox::{iou, BBox, Detection, GroundTruthBox};
pub use error::{DetectError, Result};
pub use evaluate::{evaluate, ClassEval, EvalReport, COCO_THRESHOLDS};
pub use gtsdb::{
    parse_gt, serialize_gt, split_stats, GtRecord, Split, SplitRule, SplitStats, Superclass,
    SuperclassMap,
};
pub use matching::{match_detections, MatchOutcome};
pub use ppm::{decode_ppm, encode_ppm, load_ppm, save_ppm};
pub use records::{parse_detections, serialize_detections};
