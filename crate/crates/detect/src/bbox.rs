//! Axis-aligned boxes with positive area, and the intersection-over-union
//! metric.

use serde::{Deserialize, Serialize};

use crate::error::{DetectError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(DetectError::InvalidBox {
                x1,
                y1,
                x2,
                y2,
                reason: "coordinates must be finite",
            });
        }
        if x2 <= x1 || y2 <= y1 {
            return Err(DetectError::InvalidBox {
                x1,
                y1,
                x2,
                y2,
                reason: "area must be positive (x2 > x1 and y2 > y1)",
            });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }
}

/// Intersection area over union area. Symmetric, 1 iff the boxes coincide,
/// 0 iff they are disjoint.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = ix * iy;
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// One scored, classified box proposed by a detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub bbox: BBox,
    pub class_id: u32,
    pub score: f64,
}

impl Detection {
    pub fn new(image_id: impl Into<String>, bbox: BBox, class_id: u32, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(DetectError::ScoreOutOfRange { score });
        }
        Ok(Self {
            image_id: image_id.into(),
            bbox,
            class_id,
            score,
        })
    }
}

/// One annotated box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub image_id: String,
    pub bbox: BBox,
    pub class_id: u32,
}
