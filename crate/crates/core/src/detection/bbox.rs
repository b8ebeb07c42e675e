use serde::{Deserialize, Serialize};

/// Axis-aligned box in pixel coordinates (origin top-left, y down).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub const fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    /// Builds a box from center `(u, v)`, aspect ratio `width / height` and height.
    pub fn from_xyah(u: f64, v: f64, aspect: f64, height: f64) -> Self {
        let width = aspect * height;
        Self::new(
            u - width / 2.0,
            v - height / 2.0,
            u + width / 2.0,
            v + height / 2.0,
        )
    }

    /// `(center x, center y, width / height, height)`, the tracker's measurement space.
    pub fn to_xyah(&self) -> [f64; 4] {
        let (u, v) = self.center();
        [u, v, self.width() / self.height(), self.height()]
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    /// Approximate ground-contact point used for kinematics and proximity.
    pub fn bottom_center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, self.y_max)
    }

    pub fn is_finite(&self) -> bool {
        self.x_min.is_finite() && self.y_min.is_finite() && self.x_max.is_finite() && self.y_max.is_finite()
    }

    pub fn is_proper(&self) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max
    }

    /// True when the box lies inside `[0, width] x [0, height]`.
    pub fn fits_in(&self, width: f64, height: f64) -> bool {
        self.x_min >= 0.0 && self.y_min >= 0.0 && self.x_max <= width && self.y_max <= height
    }

    pub fn intersection(&self, other: &BoundingBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Intersection over union, in `[0, 1]`. Zero-area pairs give 0.
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let inter = self.intersection(other);
        if inter <= 0.0 {
            return 0.0;
        }
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            (inter / union).clamp(0.0, 1.0)
        }
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    a.iou(b)
}
