//! Frame geometry: axis-aligned boxes, overlap, and the eight frame-moving actions.

use serde::{Deserialize, Serialize};
use std::fmt;

use super::EnvError;

/// Side length of the square canvas every prepared image is resampled to.
pub const CANVAS: f64 = 224.0;

/// Smallest extent a frame may collapse to along either axis.
pub const MIN_EXTENT: f64 = 1.0;

/// Axis-aligned rectangle in canvas pixel coordinates.
///
/// Origin is the top-left corner, y grows downward. Corners are real-valued;
/// rounding only happens when pixels are cropped or masked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxF {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl BoxF {
    pub const fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        Self { xmin, ymin, xmax, ymax }
    }

    /// The frame covering the whole canvas.
    pub const fn full_canvas() -> Self {
        Self::new(0.0, 0.0, CANVAS, CANVAS)
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    /// Area, zero for inverted or empty boxes.
    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.xmin + self.xmax) * 0.5, (self.ymin + self.ymax) * 0.5)
    }

    pub fn is_finite(&self) -> bool {
        self.xmin.is_finite() && self.ymin.is_finite() && self.xmax.is_finite() && self.ymax.is_finite()
    }

    /// Corners ordered and inside `[0, width] x [0, height]`.
    pub fn is_within(&self, width: f64, height: f64) -> bool {
        self.is_finite()
            && 0.0 <= self.xmin
            && self.xmin <= self.xmax
            && self.xmax <= width
            && 0.0 <= self.ymin
            && self.ymin <= self.ymax
            && self.ymax <= height
    }

    /// Valid observation frame on the canvas.
    pub fn is_valid_frame(&self) -> bool {
        self.is_within(CANVAS, CANVAS)
    }

    /// Scales x coordinates by `sx` and y coordinates by `sy`.
    pub fn scaled(&self, sx: f64, sy: f64) -> Self {
        Self::new(self.xmin * sx, self.ymin * sy, self.xmax * sx, self.ymax * sy)
    }

    pub fn intersection_area(&self, other: &BoxF) -> f64 {
        let w = self.xmax.min(other.xmax) - self.xmin.max(other.xmin);
        let h = self.ymax.min(other.ymax) - self.ymin.max(other.ymin);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Integer pixel span `[start, end)` of columns and rows whose centers lie
    /// inside the box, clipped to a `width` x `height` grid.
    pub fn pixel_span(&self, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let span = |lo: f64, hi: f64, n: usize| {
            let start = ((lo - 0.5).ceil().max(0.0) as usize).min(n);
            let end = ((hi - 0.5).ceil().max(0.0) as usize).min(n);
            (start, end.max(start))
        };
        let (x0, x1) = span(self.xmin, self.xmax, width);
        let (y0, y1) = span(self.ymin, self.ymax, height);
        (x0, x1, y0, y1)
    }
}

impl fmt::Display for BoxF {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.2}, {:.2}, {:.2}, {:.2})", self.xmin, self.ymin, self.xmax, self.ymax)
    }
}

/// Intersection over union. Zero when either box has zero area.
pub fn iou(a: &BoxF, b: &BoxF) -> f64 {
    let area_a = a.area();
    let area_b = b.area();
    if area_a <= 0.0 || area_b <= 0.0 {
        return 0.0;
    }
    let inter = a.intersection_area(b);
    let union = area_a + area_b - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// The nine discrete actions. `Select` claims the current frame and ends the
/// episode; the rest translate or rescale the frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
#[repr(u8)]
pub enum Action {
    Select = 0,
    MoveRight = 1,
    MoveLeft = 2,
    MoveUp = 3,
    MoveDown = 4,
    Enlarge = 5,
    Shrink = 6,
    Widen = 7,
    Narrow = 8,
}

impl Action {
    pub const COUNT: usize = 9;

    pub const ALL: [Action; 9] = [
        Action::Select,
        Action::MoveRight,
        Action::MoveLeft,
        Action::MoveUp,
        Action::MoveDown,
        Action::Enlarge,
        Action::Shrink,
        Action::Widen,
        Action::Narrow,
    ];

    /// The eight frame-moving actions.
    pub const MOVES: [Action; 8] = [
        Action::MoveRight,
        Action::MoveLeft,
        Action::MoveUp,
        Action::MoveDown,
        Action::Enlarge,
        Action::Shrink,
        Action::Widen,
        Action::Narrow,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(id: usize) -> Option<Action> {
        Self::ALL.get(id).copied()
    }

    pub fn is_select(self) -> bool {
        self == Action::Select
    }

    /// Per-corner multiples of the step size: `(xmin, ymin, xmax, ymax)`.
    fn corner_deltas(self) -> [f64; 4] {
        match self {
            Action::Select => [0.0, 0.0, 0.0, 0.0],
            Action::MoveRight => [1.0, 0.0, 1.0, 0.0],
            Action::MoveLeft => [-1.0, 0.0, -1.0, 0.0],
            Action::MoveUp => [0.0, -1.0, 0.0, -1.0],
            Action::MoveDown => [0.0, 1.0, 0.0, 1.0],
            Action::Enlarge => [-1.0, -1.0, 1.0, 1.0],
            Action::Shrink => [1.0, 1.0, -1.0, -1.0],
            // Widen squeezes the vertical extent, Narrow the horizontal one.
            Action::Widen => [0.0, 1.0, 0.0, -1.0],
            Action::Narrow => [1.0, 0.0, -1.0, 0.0],
        }
    }
}

impl From<Action> for u8 {
    fn from(a: Action) -> u8 {
        a as u8
    }
}

impl TryFrom<u8> for Action {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Action::from_index(v as usize).ok_or_else(|| format!("action id {v} out of range 0..=8"))
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Action::Select => "select",
            Action::MoveRight => "move-right",
            Action::MoveLeft => "move-left",
            Action::MoveUp => "move-up",
            Action::MoveDown => "move-down",
            Action::Enlarge => "enlarge",
            Action::Shrink => "shrink",
            Action::Widen => "widen",
            Action::Narrow => "narrow",
        };
        f.write_str(name)
    }
}

/// Applies a frame-moving action with step `step_px`, clamps to the canvas,
/// and repairs collapsed axes.
///
/// An axis whose extent drops below [`MIN_EXTENT`] (including inverted
/// corners) collapses to its midpoint and is reopened to `MIN_EXTENT`,
/// shifted back inside the canvas if needed.
pub fn apply_action(frame: &BoxF, action: Action, step_px: f64) -> Result<BoxF, EnvError> {
    if action.is_select() {
        return Err(EnvError::SelectDoesNotMove);
    }
    let d = action.corner_deltas();
    let clamp = |v: f64| v.clamp(0.0, CANVAS);
    let xmin = clamp(frame.xmin + d[0] * step_px);
    let ymin = clamp(frame.ymin + d[1] * step_px);
    let xmax = clamp(frame.xmax + d[2] * step_px);
    let ymax = clamp(frame.ymax + d[3] * step_px);
    let (xmin, xmax) = repair_axis(xmin, xmax);
    let (ymin, ymax) = repair_axis(ymin, ymax);
    Ok(BoxF::new(xmin, ymin, xmax, ymax))
}

fn repair_axis(lo: f64, hi: f64) -> (f64, f64) {
    if hi - lo >= MIN_EXTENT {
        return (lo, hi);
    }
    let mid = (lo + hi) * 0.5;
    let half = MIN_EXTENT * 0.5;
    let (mut lo, mut hi) = (mid - half, mid + half);
    if lo < 0.0 {
        lo = 0.0;
        hi = MIN_EXTENT;
    } else if hi > CANVAS {
        hi = CANVAS;
        lo = CANVAS - MIN_EXTENT;
    }
    (lo, hi)
}
