//! Axis-aligned box arithmetic, overlap metrics, non-maximum suppression,
//! and grouping of per-view detections into timestamp bundles.

use serde::{Deserialize, Serialize};

// ── Boxes ───────────────────────────────────────────────────────────────────

/// Axis-aligned box, `[x_min, y_min, x_max, y_max]` in pixel coordinates.
/// Serialized as a flat 4-array. Degenerate (zero-area) boxes are allowed;
/// every metric below returns a finite value for them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox { x0: v[0], y0: v[1], x1: v[2], y1: v[3] }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        BBox { x0, y0, x1, y1 }
    }

    pub fn is_valid(&self) -> bool {
        self.x0 <= self.x1 && self.y0 <= self.y1 && [self.x0, self.y0, self.x1, self.y1].iter().all(|v| v.is_finite())
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    /// Intersection area with `other`; 0 when disjoint.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0.0);
        let h = (self.y1.min(other.y1) - self.y0.max(other.y0)).max(0.0);
        w * h
    }

    /// Smallest box enclosing both.
    pub fn enclosing(&self, other: &BBox) -> BBox {
        BBox {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    /// Translate by (dx, dy).
    pub fn shifted(&self, dx: f64, dy: f64) -> BBox {
        BBox::new(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)
    }

    /// Grow by `m` on every side (shrink if negative, clamped to validity).
    pub fn padded(&self, m: f64) -> BBox {
        let b = BBox::new(self.x0 - m, self.y0 - m, self.x1 + m, self.y1 + m);
        if b.is_valid() {
            b
        } else {
            let (cx, cy) = self.center();
            BBox::new(cx, cy, cx, cy)
        }
    }
}

// ── Overlap metrics ─────────────────────────────────────────────────────────

/// Intersection over union, in [0, 1]. Two degenerate boxes give 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    debug_assert!(a.is_valid() && b.is_valid());
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Generalized IoU: `iou - (|C| - |U|) / |C|` with C the enclosing box.
/// In [-1, 1]; approaches -1 for small distant boxes.
pub fn giou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    let c_area = a.enclosing(b).area();
    let i = iou(a, b);
    if c_area <= 0.0 {
        i
    } else {
        i - (c_area - union) / c_area
    }
}

/// Distance IoU: `iou - d^2 / c^2` where d is the center distance and c the
/// diagonal of the enclosing box.
pub fn diou(a: &BBox, b: &BBox) -> f64 {
    let i = iou(a, b);
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    let d2 = (ax - bx).powi(2) + (ay - by).powi(2);
    let c = a.enclosing(b);
    let c2 = c.width().powi(2) + c.height().powi(2);
    if c2 <= 0.0 {
        i
    } else {
        i - d2 / c2
    }
}

/// Complete IoU: DIoU minus an aspect-ratio consistency term
/// `alpha * v`, `v = (4/pi^2) (atan(w_b/h_b) - atan(w_a/h_a))^2`,
/// `alpha = v / ((1 - iou) + v)`. Equal aspect ratios reduce it to DIoU.
pub fn ciou(a: &BBox, b: &BBox) -> f64 {
    let i = iou(a, b);
    // atan2 extends w/h continuously to degenerate boxes (atan2(0,0) = 0).
    let v = (4.0 / (std::f64::consts::PI * std::f64::consts::PI))
        * (f64::atan2(b.width(), b.height()) - f64::atan2(a.width(), a.height())).powi(2);
    let denom = (1.0 - i) + v;
    let alpha = if denom > 0.0 { v / denom } else { 0.0 };
    diou(a, b) - alpha * v
}

/// Fraction of `gt` covered by `pred`, in [0, 1]. Zero-area gt gives 0.
pub fn coverage(pred: &BBox, gt: &BBox) -> f64 {
    let g = gt.area();
    if g <= 0.0 {
        0.0
    } else {
        pred.intersection_area(gt) / g
    }
}

/// Asymmetric quality `|I| / (|gt| + beta * (|pred| - |I|))`: recall-like,
/// with false area discounted by `beta`. At `beta = 1` this is exactly IoU.
pub fn asym_quality(pred: &BBox, gt: &BBox, beta: f64) -> f64 {
    let inter = pred.intersection_area(gt);
    let denom = gt.area() + beta * (pred.area() - inter);
    if denom <= 0.0 {
        0.0
    } else {
        inter / denom
    }
}

// ── Detections ──────────────────────────────────────────────────────────────

/// One detected box in one view frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
    pub class_id: u32,
    pub view_id: u32,
    pub timestamp: f64,
}

/// Greedy class-aware non-maximum suppression. Candidates are visited in
/// descending score order (ties keep input order); a candidate is dropped
/// when its IoU with an already kept detection of the same class exceeds
/// `threshold`. Returns survivors in visit order. Idempotent.
pub fn nms(detections: &[Detection], threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .score
            .total_cmp(&detections[a].score)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<Detection> = Vec::new();
    for idx in order {
        let d = &detections[idx];
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == d.class_id && iou(&k.bbox, &d.bbox) > threshold);
        if !suppressed {
            kept.push(d.clone());
        }
    }
    kept
}

// ── View association ────────────────────────────────────────────────────────

/// Detections of one physical plate seen from one or more views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewBundle {
    pub detections: Vec<Detection>,
}

impl ViewBundle {
    /// Timestamp of the earliest detection (the bundle anchor).
    pub fn anchor_time(&self) -> f64 {
        self.detections.first().map_or(0.0, |d| d.timestamp)
    }
}

/// Group detections of class `class_id` into bundles by timestamp window.
/// Detections are ordered by (timestamp, view_id, input index); the earliest
/// unassigned one anchors a bundle that absorbs every detection within
/// `window` seconds of it (inclusive). Detections of other classes are
/// discarded. Every retained detection lands in exactly one bundle.
pub fn associate_views(detections: &[Detection], window: f64, class_id: u32) -> Vec<ViewBundle> {
    let mut order: Vec<usize> = (0..detections.len())
        .filter(|&i| detections[i].class_id == class_id)
        .collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (&detections[a], &detections[b]);
        da.timestamp
            .total_cmp(&db.timestamp)
            .then(da.view_id.cmp(&db.view_id))
            .then(a.cmp(&b))
    });

    let mut bundles = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let anchor_t = detections[order[i]].timestamp;
        let mut members = Vec::new();
        while i < order.len() && detections[order[i]].timestamp - anchor_t <= window {
            members.push(detections[order[i]].clone());
            i += 1;
        }
        bundles.push(ViewBundle { detections: members });
    }
    bundles
}
