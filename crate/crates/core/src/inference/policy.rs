use crate::agent::{greedy_action, QFunction};
use crate::dataset::{AnnotatedImage, TARGET_PALETTE};
use crate::encoder::{encode_state, FeatureExtractor, HISTORY_DIM};
use crate::env::{apply_action, iou, Action, BoxF, Episode, RewardParams};

use super::InferenceError;

/// Chooses the next action for a running episode.
pub trait Policy {
    fn act(&mut self, ep: &Episode<'_>) -> Result<Action, InferenceError>;
}

/// Greedy (epsilon = 0) policy over a trained Q-function.
pub struct QPolicy<'a> {
    q: &'a QFunction,
    fe: &'a dyn FeatureExtractor,
}

impl<'a> QPolicy<'a> {
    pub fn new(q: &'a QFunction, fe: &'a dyn FeatureExtractor) -> Result<Self, InferenceError> {
        let got = fe.output_dim() + HISTORY_DIM;
        if got != q.input_dim() {
            return Err(InferenceError::Dimension { model: q.input_dim(), extractor: got });
        }
        Ok(Self { q, fe })
    }
}

impl Policy for QPolicy<'_> {
    fn act(&mut self, ep: &Episode<'_>) -> Result<Action, InferenceError> {
        let s = encode_state(self.fe, &ep.image().pixels, &ep.frame(), ep.history())?;
        Ok(greedy_action(&self.q.q_values(s.as_slice())?))
    }
}

/// Ground-truth hill climber for synthetic images: selects once the frame
/// overlaps a visible target by at least `tau`, otherwise takes the move
/// with the largest next-step IoU (lowest id on ties). A target counts as
/// visible while at least half of its pixels still carry a palette color,
/// so masked targets are ignored. With nothing visible it never selects.
#[derive(Debug, Clone)]
pub struct OraclePolicy {
    params: RewardParams,
}

impl OraclePolicy {
    pub fn new(params: RewardParams) -> Self {
        Self { params }
    }
}

/// Share of the pixels under `b` painted with a palette color.
pub fn palette_fraction(img: &AnnotatedImage, b: &BoxF) -> f64 {
    let (x0, x1, y0, y1) = b.pixel_span(img.width(), img.height());
    let total = (x1 - x0) * (y1 - y0);
    if total == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    for y in y0..y1 {
        for x in x0..x1 {
            if TARGET_PALETTE.contains(&img.pixels.get(x, y)) {
                hits += 1;
            }
        }
    }
    hits as f64 / total as f64
}

fn best_over(frame: &BoxF, targets: &[BoxF]) -> f64 {
    targets.iter().map(|t| iou(frame, t)).fold(0.0, f64::max)
}

impl Policy for OraclePolicy {
    fn act(&mut self, ep: &Episode<'_>) -> Result<Action, InferenceError> {
        let img = ep.image();
        let live: Vec<BoxF> =
            img.target_boxes().into_iter().filter(|b| palette_fraction(img, b) >= 0.5).collect();
        let frame = ep.frame();
        if live.is_empty() {
            return Ok(Action::MoveRight);
        }
        if best_over(&frame, &live) >= self.params.tau {
            return Ok(Action::Select);
        }
        let mut best = (f64::NEG_INFINITY, Action::MoveRight);
        for a in Action::MOVES {
            let v = best_over(&apply_action(&frame, a, self.params.step_px())?, &live);
            if v > best.0 {
                best = (v, a);
            }
        }
        Ok(best.1)
    }
}
