//! Axis-aligned bounding boxes and the overlap measures built on them:
//! IoU, GIoU loss, DIoU loss and DIoU-based non-maximum suppression.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A detection box in pixel space, stored in center format.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub confidence: f64,
    pub class_id: u32,
}

/// Corner representation used internally for overlap arithmetic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Corners {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Corners {
    fn area(&self) -> f64 {
        (self.x2 - self.x1).max(0.0) * (self.y2 - self.y1).max(0.0)
    }
}

impl BoundingBox {
    /// Builds a validated box.
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, confidence: f64, class_id: u32) -> Result<Self> {
        let b = BoundingBox {
            cx,
            cy,
            w,
            h,
            confidence,
            class_id,
        };
        b.validate()?;
        Ok(b)
    }

    /// Box with confidence 1 and class 0, for tests and ground truth.
    pub fn unit_conf(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BoundingBox {
            cx,
            cy,
            w,
            h,
            confidence: 1.0,
            class_id: 0,
        }
    }

    /// Builds a box from its top-left and bottom-right corners.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BoundingBox::unit_conf((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.cx, self.cy, self.w, self.h, self.confidence]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Data("box has non-finite fields".into()));
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::Data(format!(
                "box size must be positive, got w={} h={}",
                self.w, self.h
            )));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::Data(format!(
                "confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub(crate) fn corners(&self) -> Corners {
        Corners {
            x1: self.cx - self.w / 2.0,
            y1: self.cy - self.h / 2.0,
            x2: self.cx + self.w / 2.0,
            y2: self.cy + self.h / 2.0,
        }
    }
}

fn intersection(a: &Corners, b: &Corners) -> f64 {
    Corners {
        x1: a.x1.max(b.x1),
        y1: a.y1.max(b.y1),
        x2: a.x2.min(b.x2),
        y2: a.y2.min(b.y2),
    }
    .area()
}

fn enclosing(a: &Corners, b: &Corners) -> Corners {
    Corners {
        x1: a.x1.min(b.x1),
        y1: a.y1.min(b.y1),
        x2: a.x2.max(b.x2),
        y2: a.y2.max(b.y2),
    }
}

/// Intersection over union. Symmetric, 1 for identical boxes, 0 when disjoint.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ca, cb) = (a.corners(), b.corners());
    let inter = intersection(&ca, &cb);
    let union = ca.area() + cb.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// `1 - IoU + |C \ (A ∪ B)| / |C|` with `C` the smallest enclosing box.
pub fn giou_loss(pred: &BoundingBox, gt: &BoundingBox) -> f64 {
    let (cp, cg) = (pred.corners(), gt.corners());
    let inter = intersection(&cp, &cg);
    let union = cp.area() + cg.area() - inter;
    let hull = enclosing(&cp, &cg).area();
    let slack = if hull > 0.0 {
        ((hull - union) / hull).max(0.0)
    } else {
        0.0
    };
    1.0 - iou(pred, gt) + slack
}

/// Normalized squared center distance `ρ²(b, b_gt) / c²`, where `c` is the
/// diagonal of the smallest enclosing box. Zero when the enclosing box is a point.
pub fn center_distance_penalty(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let hull = enclosing(&a.corners(), &b.corners());
    let diag_sq = (hull.x2 - hull.x1).powi(2) + (hull.y2 - hull.y1).powi(2);
    if diag_sq <= 0.0 {
        return 0.0;
    }
    let rho_sq = (a.cx - b.cx).powi(2) + (a.cy - b.cy).powi(2);
    rho_sq / diag_sq
}

/// `1 - IoU + ρ²/c²`.
pub fn diou_loss(pred: &BoundingBox, gt: &BoundingBox) -> f64 {
    1.0 - iou(pred, gt) + center_distance_penalty(pred, gt)
}

/// DIoU-adjusted overlap `IoU - ρ²/c²` used as the suppression criterion.
pub fn diou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    iou(a, b) - center_distance_penalty(a, b)
}

/// Greedy DIoU non-maximum suppression.
///
/// Boxes below `conf_threshold` are dropped. Remaining boxes are visited in
/// descending confidence (ties by input index); a box is suppressed when its
/// DIoU-adjusted overlap with an already kept box exceeds `nms_threshold`.
pub fn diou_nms(boxes: &[BoundingBox], conf_threshold: f64, nms_threshold: f64) -> Vec<BoundingBox> {
    let mut order: Vec<usize> = (0..boxes.len())
        .filter(|&i| boxes[i].confidence >= conf_threshold)
        .collect();
    order.sort_by(|&i, &j| {
        boxes[j]
            .confidence
            .total_cmp(&boxes[i].confidence)
            .then(i.cmp(&j))
    });

    let mut kept: Vec<BoundingBox> = Vec::new();
    for i in order {
        let candidate = &boxes[i];
        if kept.iter().all(|k| diou(k, candidate) <= nms_threshold) {
            kept.push(*candidate);
        }
    }
    kept
}
