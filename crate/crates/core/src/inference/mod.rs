//! Rolling out trained policies, scoring them and drawing the results.

mod metrics;
mod policy;
mod render;

pub use metrics::{match_detections, step_statistics, ClassStats, EvalReport, MatchOutcome, StepStats};
pub use policy::{palette_fraction, OraclePolicy, Policy, QPolicy};
pub use render::{render_annotated, save_annotated, STROKE_COLOR, STROKE_PX};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentError, QFunction};
use crate::dataset::AnnotatedImage;
use crate::encoder::{EncoderError, FeatureExtractor};
use crate::env::{best_iou_over_targets, mask_region, BoxF, EnvError, Episode, EpisodeEnd, RewardParams};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("model expects {model}-value states, extractor yields {extractor}")]
    Dimension { model: usize, extractor: usize },
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("image `{0}` has no ground truth")]
    MissingGroundTruth(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Outcome of one rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoxF,
    pub steps_taken: usize,
    pub terminated_by: EpisodeEnd,
    /// Against the image's ground truth, when it has any.
    pub best_iou: Option<f64>,
}

impl Detection {
    pub fn selected(&self) -> bool {
        self.terminated_by == EpisodeEnd::Select
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub max_steps: usize,
    /// Upper bound on selections per image in the multi-target loop.
    pub max_targets: usize,
    pub iou_threshold: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self { max_steps: crate::env::DEFAULT_MAX_STEPS, max_targets: 5, iou_threshold: 0.5 }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut errs = Vec::new();
        if self.max_steps == 0 {
            errs.push("max_steps must be positive".into());
        }
        if self.max_targets == 0 {
            errs.push("max_targets must be positive".into());
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            errs.push(format!("iou_threshold must lie in (0, 1], got {}", self.iou_threshold));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

/// One rollout from the full-canvas frame until Select or the step cap.
pub fn detect_with(
    policy: &mut dyn Policy,
    img: &AnnotatedImage,
    max_steps: usize,
    params: &RewardParams,
) -> Result<Detection, InferenceError> {
    let mut ep = Episode::reset(img, max_steps)?;
    let end = loop {
        let action = policy.act(&ep)?;
        if let Some(end) = ep.advance(action, params)? {
            break end;
        }
    };
    let best_iou = match best_iou_over_targets(&ep.frame(), &img.target_boxes()) {
        Ok((v, _)) => Some(v),
        Err(_) => None,
    };
    Ok(Detection { bbox: ep.frame(), steps_taken: ep.t(), terminated_by: end, best_iou })
}

/// Greedy Q-policy rollout.
pub fn detect_single(
    model: &QFunction,
    fe: &dyn FeatureExtractor,
    img: &AnnotatedImage,
    max_steps: usize,
    params: &RewardParams,
) -> Result<Detection, InferenceError> {
    detect_with(&mut QPolicy::new(model, fe)?, img, max_steps, params)
}

/// Repeated rollouts, masking each selected frame with the image mean,
/// until an episode hits the step cap or `max_targets` selections are made.
/// Returns every attempt in order, including the final capped one.
pub fn detect_all_with(
    policy: &mut dyn Policy,
    img: &AnnotatedImage,
    cfg: &InferenceConfig,
    params: &RewardParams,
) -> Result<Vec<Detection>, InferenceError> {
    let mut work = img.clone();
    let mut out = Vec::new();
    let mut selected = 0;
    while selected < cfg.max_targets {
        let d = detect_with(policy, &work, cfg.max_steps, params)?;
        let hit = d.selected();
        if hit {
            selected += 1;
            work = mask_region(&work, &d.bbox);
        }
        out.push(d);
        if !hit {
            break;
        }
    }
    Ok(out)
}

pub fn detect_all(
    model: &QFunction,
    fe: &dyn FeatureExtractor,
    img: &AnnotatedImage,
    cfg: &InferenceConfig,
    params: &RewardParams,
) -> Result<Vec<Detection>, InferenceError> {
    detect_all_with(&mut QPolicy::new(model, fe)?, img, cfg, params)
}

/// Detections for one test image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDetections {
    pub image: String,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: EvalReport,
    pub step_stats: StepStats,
    pub images: Vec<ImageDetections>,
}

/// Runs the multi-target loop on every image and scores the selected frames.
/// Step statistics cover the first rollout on each image.
pub fn evaluate_with(
    policy: &mut dyn Policy,
    testset: &[AnnotatedImage],
    cfg: &InferenceConfig,
    params: &RewardParams,
) -> Result<Evaluation, InferenceError> {
    if testset.is_empty() {
        return Err(InferenceError::EmptyTestSet);
    }
    let mut images = Vec::with_capacity(testset.len());
    for img in testset {
        if img.targets.is_empty() {
            return Err(InferenceError::MissingGroundTruth(img.name.clone()));
        }
        let detections = detect_all_with(policy, img, cfg, params)?;
        images.push(ImageDetections { image: img.name.clone(), detections });
    }
    let report = EvalReport::from_images(testset, &images, cfg.iou_threshold);
    let first: Vec<Detection> = images.iter().map(|d| d.detections[0].clone()).collect();
    let step_stats = step_statistics(&first, cfg.iou_threshold);
    Ok(Evaluation { report, step_stats, images })
}

pub fn evaluate(
    model: &QFunction,
    fe: &dyn FeatureExtractor,
    testset: &[AnnotatedImage],
    cfg: &InferenceConfig,
    params: &RewardParams,
) -> Result<Evaluation, InferenceError> {
    evaluate_with(&mut QPolicy::new(model, fe)?, testset, cfg, params)
}
