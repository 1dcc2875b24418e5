//! The detection MDP: frame geometry, rewards, the episode lifecycle and
//! region masking.

mod geometry;
mod reward;

pub use geometry::{apply_action, iou, Action, BoxF, CANVAS, MIN_EXTENT};
pub use reward::{select_reward, step_reward, RewardParams};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::AnnotatedImage;
use crate::encoder::HistoryWindow;

/// Step cap per episode.
pub const DEFAULT_MAX_STEPS: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("select does not move the frame")]
    SelectDoesNotMove,
    #[error("episode already ended ({0:?})")]
    EpisodeOver(EpisodeEnd),
    #[error("image has no ground-truth targets")]
    NoTargets,
    #[error("image must be {expected}x{expected}, got {width}x{height}")]
    NotPrepared { expected: usize, width: usize, height: usize },
}

/// Maximum IoU between `frame` and any target, with the lowest index among ties.
pub fn best_iou_over_targets(frame: &BoxF, targets: &[BoxF]) -> Result<(f64, usize), EnvError> {
    let mut best: Option<(f64, usize)> = None;
    for (i, t) in targets.iter().enumerate() {
        let v = iou(frame, t);
        if best.is_none_or(|(b, _)| v > b) {
            best = Some((v, i));
        }
    }
    best.ok_or(EnvError::NoTargets)
}

/// How an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeEnd {
    /// The agent chose `Select`; a true terminal state.
    Select,
    /// The step cap was reached; the rollout stops but the MDP did not end.
    StepCap,
}

/// Outcome of one rewarded environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub iou_before: f64,
    pub iou_after: f64,
    pub end: Option<EpisodeEnd>,
}

impl StepOutcome {
    /// Terminal for bootstrapping purposes: only `Select` ends the MDP.
    pub fn terminal(&self) -> bool {
        self.end == Some(EpisodeEnd::Select)
    }
}

/// One rollout of the observation frame over an image.
#[derive(Debug, Clone)]
pub struct Episode<'a> {
    image: &'a AnnotatedImage,
    targets: Vec<BoxF>,
    frame: BoxF,
    t: usize,
    history: HistoryWindow,
    end: Option<EpisodeEnd>,
    max_steps: usize,
}

impl<'a> Episode<'a> {
    /// Starts with the frame over the whole canvas, `t = 0`, fresh history.
    pub fn reset(image: &'a AnnotatedImage, max_steps: usize) -> Result<Self, EnvError> {
        let n = CANVAS as usize;
        if image.width() != n || image.height() != n {
            return Err(EnvError::NotPrepared { expected: n, width: image.width(), height: image.height() });
        }
        Ok(Self {
            image,
            targets: image.target_boxes(),
            frame: BoxF::full_canvas(),
            t: 0,
            history: HistoryWindow::new(),
            end: None,
            max_steps,
        })
    }

    pub fn image(&self) -> &'a AnnotatedImage {
        self.image
    }

    pub fn frame(&self) -> BoxF {
        self.frame
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn history(&self) -> &HistoryWindow {
        &self.history
    }

    pub fn end(&self) -> Option<EpisodeEnd> {
        self.end
    }

    pub fn is_over(&self) -> bool {
        self.end.is_some()
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    /// Best IoU of the current frame against the ground truth.
    pub fn best_iou(&self) -> Result<(f64, usize), EnvError> {
        best_iou_over_targets(&self.frame, &self.targets)
    }

    /// Applies an action without computing a reward (inference path).
    pub fn advance(&mut self, action: Action, p: &RewardParams) -> Result<Option<EpisodeEnd>, EnvError> {
        if let Some(end) = self.end {
            return Err(EnvError::EpisodeOver(end));
        }
        if action.is_select() {
            self.end = Some(EpisodeEnd::Select);
        } else {
            self.frame = apply_action(&self.frame, action, p.step_px())?;
            self.history.push(action);
            self.t += 1;
            if self.t >= self.max_steps {
                self.end = Some(EpisodeEnd::StepCap);
            }
        }
        Ok(self.end)
    }

    /// Applies an action and scores it against the best-matching target.
    /// Rewards use the step counter before it is incremented.
    pub fn step(&mut self, action: Action, p: &RewardParams) -> Result<StepOutcome, EnvError> {
        if let Some(end) = self.end {
            return Err(EnvError::EpisodeOver(end));
        }
        let t = self.t;
        let (before, _) = self.best_iou()?;
        let end = self.advance(action, p)?;
        if action.is_select() {
            return Ok(StepOutcome { reward: select_reward(before, t, p), iou_before: before, iou_after: before, end });
        }
        let (after, _) = self.best_iou()?;
        Ok(StepOutcome { reward: step_reward(before, after, t, p), iou_before: before, iou_after: after, end })
    }
}

/// Replaces every pixel whose center lies in `frame` with the whole image's
/// per-channel mean (computed before masking). Targets are kept.
pub fn mask_region(img: &AnnotatedImage, frame: &BoxF) -> AnnotatedImage {
    let mut out = img.clone();
    let means = img.pixels.channel_means().map(|m| m as f32);
    let (x0, x1, y0, y1) = frame.pixel_span(img.width(), img.height());
    for y in y0..y1 {
        for x in x0..x1 {
            out.pixels.set(x, y, means);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Target;
    use crate::raster::Raster;

    fn image_with(targets: &[BoxF]) -> AnnotatedImage {
        AnnotatedImage {
            name: "t".into(),
            pixels: Raster::filled(224, 224, [0.5, 0.5, 0.5]),
            targets: targets.iter().map(|b| Target { label: "x".into(), bbox: *b }).collect(),
        }
    }

    #[test]
    fn best_iou_picks_max_and_lowest_tie() {
        let a = BoxF::new(0.0, 0.0, 10.0, 10.0);
        let b = BoxF::new(100.0, 100.0, 120.0, 120.0);
        assert_eq!(best_iou_over_targets(&a, &[a]).unwrap(), (1.0, 0));
        let (v, i) = best_iou_over_targets(&BoxF::new(105.0, 105.0, 125.0, 125.0), &[a, b]).unwrap();
        assert!(v > 0.0);
        assert_eq!(i, 1);
        assert_eq!(best_iou_over_targets(&BoxF::new(50.0, 50.0, 60.0, 60.0), &[a, b]).unwrap(), (0.0, 0));
        assert_eq!(best_iou_over_targets(&a, &[]), Err(EnvError::NoTargets));
    }

    #[test]
    fn reset_covers_canvas() {
        let img = image_with(&[BoxF::new(10.0, 10.0, 40.0, 40.0)]);
        let ep = Episode::reset(&img, 100).unwrap();
        assert_eq!(ep.frame(), BoxF::full_canvas());
        assert_eq!(ep.t(), 0);
        assert_eq!(ep.max_steps(), 100);
        assert_eq!(ep.history(), &HistoryWindow::new());
        assert!(!ep.is_over());
        let again = Episode::reset(&img, 100).unwrap();
        assert_eq!((again.frame(), again.t()), (ep.frame(), ep.t()));
    }

    #[test]
    fn reset_rejects_unprepared_image() {
        let mut img = image_with(&[]);
        img.pixels = Raster::new(100, 50);
        assert!(matches!(Episode::reset(&img, 100), Err(EnvError::NotPrepared { .. })));
    }

    #[test]
    fn select_on_target_is_terminal_with_full_reward() {
        let img = image_with(&[BoxF::full_canvas()]);
        let mut ep = Episode::reset(&img, 100).unwrap();
        let out = ep.step(Action::Select, &RewardParams::default()).unwrap();
        assert!((out.reward - 6.8).abs() < 1e-12);
        assert!(out.terminal());
        assert_eq!(ep.t(), 0);
        assert_eq!(
            ep.step(Action::MoveLeft, &RewardParams::default()),
            Err(EnvError::EpisodeOver(EpisodeEnd::Select))
        );
    }

    #[test]
    fn improving_move_rewards_one() {
        let img = image_with(&[BoxF::new(180.0, 80.0, 224.0, 140.0)]);
        let mut ep = Episode::reset(&img, 100).unwrap();
        ep.frame = BoxF::new(130.0, 60.0, 190.0, 160.0);
        let out = ep.step(Action::MoveRight, &RewardParams::default()).unwrap();
        assert!((out.reward - 1.0).abs() < 1e-12);
        assert!(out.iou_after > out.iou_before);
        assert_eq!(ep.t(), 1);
        assert_eq!(ep.history().rows()[0][Action::MoveRight.index()], 1.0);
    }

    #[test]
    fn step_cap_truncates_without_terminal() {
        let img = image_with(&[BoxF::new(10.0, 10.0, 40.0, 40.0)]);
        let mut ep = Episode::reset(&img, 100).unwrap();
        let p = RewardParams::default();
        let mut last = None;
        for i in 0..100 {
            let a = if i % 2 == 0 { Action::MoveRight } else { Action::MoveLeft };
            last = Some(ep.step(a, &p).unwrap());
        }
        let last = last.unwrap();
        assert_eq!(last.end, Some(EpisodeEnd::StepCap));
        assert!(!last.terminal());
        assert_eq!(ep.t(), 100);
        assert!(ep.step(Action::Select, &p).is_err());
    }

    #[test]
    fn mask_uniform_image_is_fixed_point() {
        let img = image_with(&[]);
        assert_eq!(mask_region(&img, &BoxF::new(10.0, 10.0, 100.0, 50.0)), img);
    }

    #[test]
    fn mask_sets_channel_means() {
        let mut img = image_with(&[]);
        for y in 0..224 {
            for x in 0..224 {
                img.pixels.set(x, y, [x as f32 / 223.0, y as f32 / 223.0, ((x + y) % 7) as f32 / 6.0]);
            }
        }
        // Brute-force channel means.
        let mut sums = [0.0f64; 3];
        for y in 0..224 {
            for x in 0..224 {
                let p = img.pixels.get(x, y);
                for c in 0..3 {
                    sums[c] += p[c] as f64;
                }
            }
        }
        let means = sums.map(|s| (s / (224.0 * 224.0)) as f32);
        let frame = BoxF::new(50.0, 20.0, 52.0, 200.0);
        let out = mask_region(&img, &frame);
        for y in 0..224 {
            for x in 0..224 {
                if (50..52).contains(&x) && (20..200).contains(&y) {
                    assert_eq!(out.pixels.get(x, y), means);
                } else {
                    assert_eq!(out.pixels.get(x, y), img.pixels.get(x, y));
                }
            }
        }
    }

    #[test]
    fn mask_zero_area_frame_is_noop() {
        let mut img = image_with(&[]);
        img.pixels.set(3, 3, [1.0, 0.0, 0.0]);
        assert_eq!(mask_region(&img, &BoxF::new(3.0, 3.0, 3.0, 3.0)), img);
    }
}
