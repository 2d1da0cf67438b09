//! Axis-aligned box arithmetic.
//!
//! Boxes are stored in corner form `(x1, y1, x2, y2)` in image pixel
//! coordinates, with `y` growing downwards. Areas use the continuous
//! convention `(x2 - x1) * (y2 - y1)`: an integer annotation `(x, y, w, h)`
//! covers exactly `w * h` square units, there is no `+1`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("box coordinates must be finite, got ({x1}, {y1}, {x2}, {y2})")]
    NonFinite { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("box corners out of order: ({x1}, {y1}, {x2}, {y2})")]
    Inverted { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("full box is degenerate, cannot build an attention grid")]
    DegenerateFull,
    #[error("mask resolution must be at least 1x1, got {h}x{w}")]
    EmptyResolution { h: usize, w: usize },
}

/// Axis-aligned rectangle, `x1 <= x2` and `y1 <= y2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        if !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(GeometryError::NonFinite { x1, y1, x2, y2 });
        }
        if x1 > x2 || y1 > y2 {
            return Err(GeometryError::Inverted { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Builds a box from a top-left corner and a size: `x2 = x + w`, `y2 = y + h`.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        Self::new(x, y, x + w, y + h)
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
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

    pub fn corners(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x1, self.y1, self.width(), self.height()]
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// True when the box has zero width or zero height.
    pub fn is_degenerate(&self) -> bool {
        self.x1 == self.x2 || self.y1 == self.y2
    }

    /// Closed-set intersection. Boxes that only touch along an edge yield a
    /// zero-area box; `None` means the boxes are disjoint.
    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x1 = self.x1.max(other.x1);
        let y1 = self.y1.max(other.y1);
        let x2 = self.x2.min(other.x2);
        let y2 = self.y2.min(other.y2);
        if x1 > x2 || y1 > y2 {
            None
        } else {
            Some(BBox { x1, y1, x2, y2 })
        }
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Smallest box containing both.
    pub fn hull(&self, other: &BBox) -> BBox {
        BBox {
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
            x2: self.x2.max(other.x2),
            y2: self.y2.max(other.y2),
        }
    }

    /// `other` lies inside `self` (boundaries included).
    pub fn contains(&self, other: &BBox) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && self.x2 >= other.x2 && self.y2 >= other.y2
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        self.x1 <= x && x <= self.x2 && self.y1 <= y && y <= self.y2
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    /// Scales about the origin. `s` must be positive.
    pub fn scale(&self, s: f64) -> BBox {
        debug_assert!(s > 0.0);
        BBox {
            x1: self.x1 * s,
            y1: self.y1 * s,
            x2: self.x2 * s,
            y2: self.y2 * s,
        }
    }

    /// Clips to `[0, width] x [0, height]`. A box entirely outside collapses
    /// onto the nearest border.
    pub fn clip(&self, width: f64, height: f64) -> BBox {
        let cx = |v: f64| v.clamp(0.0, width);
        let cy = |v: f64| v.clamp(0.0, height);
        BBox {
            x1: cx(self.x1),
            y1: cy(self.y1),
            x2: cx(self.x2),
            y2: cy(self.y2),
        }
    }
}

/// Intersection over union. Zero when the union has no area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Intersection over the area of `v` (the "foreground" box). Asymmetric.
pub fn iof(a: &BBox, v: &BBox) -> f64 {
    let area = v.area();
    if area <= 0.0 {
        0.0
    } else {
        (a.intersection_area(v) / area).clamp(0.0, 1.0)
    }
}

/// Which box of a pair an operation looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoxSelector {
    #[default]
    Full,
    Visible,
}

/// A full-body box bound to its visible-body box. The visible box is not
/// required to lie inside the full box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedBox {
    pub full: BBox,
    pub visible: BBox,
}

impl PairedBox {
    pub fn new(full: BBox, visible: BBox) -> Self {
        Self { full, visible }
    }

    /// A pair whose visible box equals the full box.
    pub fn unoccluded(full: BBox) -> Self {
        Self {
            full,
            visible: full,
        }
    }

    pub fn select(&self, selector: BoxSelector) -> &BBox {
        match selector {
            BoxSelector::Full => &self.full,
            BoxSelector::Visible => &self.visible,
        }
    }

    pub fn visible_inside_full(&self) -> bool {
        self.full.contains(&self.visible)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> PairedBox {
        PairedBox {
            full: self.full.translate(dx, dy),
            visible: self.visible.translate(dx, dy),
        }
    }

    pub fn scale(&self, s: f64) -> PairedBox {
        PairedBox {
            full: self.full.scale(s),
            visible: self.visible.scale(s),
        }
    }
}

/// Binary mask over the full box of a pair, row-major, `h` rows by `w` columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    h: usize,
    w: usize,
    cells: Vec<u8>,
}

impl AttentionMask {
    pub const DEFAULT_RESOLUTION: (usize, usize) = (7, 7);

    pub fn resolution(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.cells[row * self.w + col]
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.cells.chunks(self.w)
    }

    pub fn count_ones(&self) -> usize {
        self.cells.iter().filter(|&&c| c == 1).count()
    }
}

/// Splits `pair.full` into an `h x w` grid and marks a cell 1 when its
/// center falls inside `pair.visible`. Membership is half-open,
/// `x1 <= cx < x2` and `y1 <= cy < y2`, so a center on the right or bottom
/// edge of the visible box is outside and a zero-area visible box marks nothing.
pub fn attention_mask(
    pair: &PairedBox,
    resolution: (usize, usize),
) -> Result<AttentionMask, GeometryError> {
    let (h, w) = resolution;
    if h == 0 || w == 0 {
        return Err(GeometryError::EmptyResolution { h, w });
    }
    let full = &pair.full;
    if full.is_degenerate() {
        return Err(GeometryError::DegenerateFull);
    }
    let vis = &pair.visible;
    let cell_w = full.width() / w as f64;
    let cell_h = full.height() / h as f64;
    let mut cells = Vec::with_capacity(h * w);
    for r in 0..h {
        let cy = full.y1 + (r as f64 + 0.5) * cell_h;
        let row_in = vis.y1 <= cy && cy < vis.y2;
        for c in 0..w {
            let cx = full.x1 + (c as f64 + 0.5) * cell_w;
            let inside = row_in && vis.x1 <= cx && cx < vis.x2;
            cells.push(u8::from(inside));
        }
    }
    Ok(AttentionMask { h, w, cells })
}
