//! Axis-aligned bounding boxes in corner representation, with the
//! intersection-over-union and union-box operations the rest of the
//! crate builds on.
//!
//! Areas are continuous: `(x2 - x1) * (y2 - y1)`, with no pixel
//! "+1" correction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoxError {
    #[error("box coordinate is not finite: ({0}, {1}, {2}, {3})")]
    NonFinite(f64, f64, f64, f64),
    #[error("box coordinate is negative: ({0}, {1}, {2}, {3})")]
    Negative(f64, f64, f64, f64),
    #[error("box has empty extent (requires x1 < x2 and y1 < y2): ({0}, {1}, {2}, {3})")]
    Empty(f64, f64, f64, f64),
}

/// Axis-aligned box with `x1 < x2`, `y1 < y2`, all coordinates finite
/// and non-negative. Immutable once constructed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, BoxError> {
        if !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(BoxError::NonFinite(x1, y1, x2, y2));
        }
        if x1 < 0.0 || y1 < 0.0 {
            return Err(BoxError::Negative(x1, y1, x2, y2));
        }
        if x1 >= x2 || y1 >= y2 {
            return Err(BoxError::Empty(x1, y1, x2, y2));
        }
        Ok(BBox { x1, y1, x2, y2 })
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Central x-coordinate, used by the left-to-right region ordering.
    pub fn center_x(&self) -> f64 {
        (self.x1 + self.x2) / 2.0
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = BoxError;
    fn try_from(v: [f64; 4]) -> Result<Self, BoxError> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> [f64; 4] {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

/// Intersection-over-union of two boxes; 0 when disjoint.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Smallest axis-aligned box containing both inputs.
pub fn union_box(a: &BBox, b: &BBox) -> BBox {
    BBox {
        x1: a.x1.min(b.x1),
        y1: a.y1.min(b.y1),
        x2: a.x2.max(b.x2),
        y2: a.y2.max(b.y2),
    }
}

/// True iff the boxes have strictly positive intersection area.
/// Boxes touching only at an edge or corner do not overlap.
pub fn boxes_overlap(a: &BBox, b: &BBox) -> bool {
    a.intersection_area(b) > 0.0
}
