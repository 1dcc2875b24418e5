//! Reward shaping for the select and frame-moving branches.

use serde::{Deserialize, Serialize};

use super::geometry::CANVAS;

/// Environment constants that shape rewards and the frame step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardParams {
    /// IoU threshold separating a successful select from a failed one.
    pub tau: f64,
    /// Amplification of the distance between IoU and `tau`.
    pub nu: f64,
    /// Divisor of the step counter in both reward branches.
    pub step_divisor: f64,
    /// Fraction of the canvas side moved or resized by one action.
    pub delta_fraction: f64,
    /// Flip the sign of the step term on select (ablation switch).
    pub negate_select_step_term: bool,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            tau: 0.66,
            nu: 20.0,
            step_divisor: 500.0,
            delta_fraction: 0.03,
            negate_select_step_term: false,
        }
    }
}

impl RewardParams {
    /// Pixel distance of one translate/scale step.
    pub fn step_px(&self) -> f64 {
        CANVAS * self.delta_fraction
    }

    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut errs = Vec::new();
        if !(self.tau > 0.0 && self.tau < 1.0) {
            errs.push(format!("tau must lie in (0, 1), got {}", self.tau));
        }
        if self.nu.is_nan() || self.nu <= 0.0 {
            errs.push(format!("nu must be positive, got {}", self.nu));
        }
        if self.step_divisor.is_nan() || self.step_divisor <= 0.0 {
            errs.push(format!("step_divisor must be positive, got {}", self.step_divisor));
        }
        if !(self.delta_fraction > 0.0 && self.delta_fraction < 0.5) {
            errs.push(format!("delta_fraction must lie in (0, 0.5), got {}", self.delta_fraction));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

/// Reward for the select action at step `t`.
///
/// Success (`iou >= tau`) is floored at 3, failure capped at -3, and the
/// step term `t / step_divisor` is added in both cases.
pub fn select_reward(iou: f64, t: usize, p: &RewardParams) -> f64 {
    let gap = (iou - p.tau) * p.nu;
    let base = if iou >= p.tau { gap.max(3.0) } else { gap.min(-3.0) };
    let step_term = t as f64 / p.step_divisor;
    if p.negate_select_step_term {
        base - step_term
    } else {
        base + step_term
    }
}

/// Reward for a frame-moving action taken at step `t`.
///
/// +1 only when the IoU strictly improves; no change counts as -1.
pub fn step_reward(iou_prev: f64, iou_next: f64, t: usize, p: &RewardParams) -> f64 {
    let direction = if iou_next > iou_prev { 1.0 } else { -1.0 };
    direction - t as f64 / p.step_divisor
}
