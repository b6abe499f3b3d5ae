//! Axis-aligned rectangles shared by the imaging and detection stages.

use serde::{Deserialize, Serialize};

/// Rectangle in pixel coordinates, `(x_min, y_min)` to `(x_max, y_max)`.
///
/// Coordinates live on the pixel grid: for area purposes the rectangle spans
/// the half-open range `[x_min, x_max) × [y_min, y_max)`, so a full-frame box
/// on a 100×100 image is `(0, 0, 100, 100)`. Coordinates may lie outside the
/// image; consumers clip. A rectangle with `x_min == x_max` or
/// `y_min == y_max` is degenerate (zero area).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelRect {
    pub x_min: i64,
    pub y_min: i64,
    pub x_max: i64,
    pub y_max: i64,
}

impl PixelRect {
    pub fn new(x_min: i64, y_min: i64, x_max: i64, y_max: i64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> i64 {
        (self.x_max - self.x_min).max(0)
    }

    pub fn height(&self) -> i64 {
        (self.y_max - self.y_min).max(0)
    }

    pub fn area(&self) -> f64 {
        self.width() as f64 * self.height() as f64
    }

    fn as_f64(&self) -> [f64; 4] {
        [
            self.x_min as f64,
            self.y_min as f64,
            self.x_max as f64,
            self.y_max as f64,
        ]
    }
}

/// Intersection-over-union of two pixel rectangles.
///
/// Returns 0 for disjoint rectangles and when both are degenerate.
pub fn iou(a: &PixelRect, b: &PixelRect) -> f64 {
    rect_iou(a.as_f64(), b.as_f64())
}

/// IoU over `[x_min, y_min, x_max, y_max]` rectangles in any consistent unit.
pub(crate) fn rect_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let inter_w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let inter_h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = inter_w * inter_h;
    let area_a = (a[2] - a[0]).max(0.0) * (a[3] - a[1]).max(0.0);
    let area_b = (b[2] - b[0]).max(0.0) * (b[3] - b[1]).max(0.0);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}
