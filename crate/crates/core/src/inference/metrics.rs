use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::{Detection, ImageDetections};
use crate::dataset::{AnnotatedImage, Target};
use crate::env::{iou, BoxF, EpisodeEnd};

/// Class name used for false positives on images without ground truth.
pub const NO_CLASS: &str = "<none>";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// `tp / (tp + fp)`; stands in for average precision since greedy
    /// rollouts carry no confidence score to rank by.
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

impl ClassStats {
    fn finish(&mut self) {
        self.precision = ratio(self.tp, self.tp + self.fp);
        self.recall = ratio(self.tp, self.tp + self.fn_);
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_threshold: f64,
    pub images: usize,
    pub ground_truth: usize,
    pub selections: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub per_class: BTreeMap<String, ClassStats>,
}

/// Per-image matching result, indexed like the inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    /// For each detection: the class it is charged to and whether it is a
    /// true positive.
    pub detections: Vec<(String, bool)>,
    /// Ground-truth indices no detection claimed.
    pub unmatched: Vec<usize>,
}

/// Greedy matching in detection order: each box claims the unmatched truth
/// it overlaps most (lowest index on ties). It is a true positive when that
/// IoU reaches `threshold`; otherwise a false positive charged to the class
/// of that truth, or of the best-overlapping truth overall once all are
/// taken.
pub fn match_detections(truth: &[Target], boxes: &[BoxF], threshold: f64) -> MatchOutcome {
    let mut taken = vec![false; truth.len()];
    let mut detections = Vec::with_capacity(boxes.len());
    for b in boxes {
        let best = |only_free: bool| {
            let mut best: Option<(f64, usize)> = None;
            for (i, t) in truth.iter().enumerate() {
                if only_free && taken[i] {
                    continue;
                }
                let v = iou(b, &t.bbox);
                if best.is_none_or(|(bv, _)| v > bv) {
                    best = Some((v, i));
                }
            }
            best
        };
        match best(true) {
            Some((v, i)) if v >= threshold => {
                taken[i] = true;
                detections.push((truth[i].label.clone(), true));
            }
            Some((_, i)) => detections.push((truth[i].label.clone(), false)),
            None => {
                let label = best(false).map_or(NO_CLASS.to_string(), |(_, i)| truth[i].label.clone());
                detections.push((label, false));
            }
        }
    }
    let unmatched = taken.iter().enumerate().filter(|(_, t)| !**t).map(|(i, _)| i).collect();
    MatchOutcome { detections, unmatched }
}

impl EvalReport {
    /// Scores the Select-terminated detections of each image; capped
    /// rollouts are not predictions.
    pub fn from_images(testset: &[AnnotatedImage], results: &[ImageDetections], threshold: f64) -> Self {
        let mut per_class: BTreeMap<String, ClassStats> = BTreeMap::new();
        let mut selections = 0;
        for (img, res) in testset.iter().zip(results) {
            let boxes: Vec<BoxF> = res.detections.iter().filter(|d| d.selected()).map(|d| d.bbox).collect();
            selections += boxes.len();
            let m = match_detections(&img.targets, &boxes, threshold);
            for t in &img.targets {
                per_class.entry(t.label.clone()).or_default();
            }
            for (label, hit) in m.detections {
                let c = per_class.entry(label).or_default();
                if hit {
                    c.tp += 1;
                } else {
                    c.fp += 1;
                }
            }
            for i in m.unmatched {
                per_class.get_mut(&img.targets[i].label).expect("class registered above").fn_ += 1;
            }
        }
        for c in per_class.values_mut() {
            c.finish();
        }
        let mut total = ClassStats::default();
        for c in per_class.values() {
            total.tp += c.tp;
            total.fp += c.fp;
            total.fn_ += c.fn_;
        }
        total.finish();
        EvalReport {
            iou_threshold: threshold,
            images: testset.len(),
            ground_truth: testset.iter().map(|i| i.targets.len()).sum(),
            selections,
            tp: total.tp,
            fp: total.fp,
            fn_: total.fn_,
            precision: total.precision,
            recall: total.recall,
            per_class,
        }
    }
}

/// Rollout statistics in the style of a step-count table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub runs: usize,
    /// Runs whose final frame reaches the IoU threshold, however they ended.
    /// Runs without ground truth count as successes.
    pub successes: usize,
    pub triggered: usize,
    pub trigger_rate: f64,
    pub capped: usize,
    pub cap_rate: f64,
    /// Order statistics of `t` over successful runs.
    pub mean_t: Option<f64>,
    /// Lower middle for even counts.
    pub median_t: Option<usize>,
    pub min_t: Option<usize>,
    /// Largest `t` among triggered runs.
    pub max_trigger_t: Option<usize>,
}

pub fn step_statistics(detections: &[Detection], iou_threshold: f64) -> StepStats {
    let runs = detections.len();
    let rate = |n: usize| if runs == 0 { 0.0 } else { n as f64 / runs as f64 };
    let triggered = detections.iter().filter(|d| d.terminated_by == EpisodeEnd::Select).count();
    let capped = runs - triggered;
    let mut ts: Vec<usize> = detections
        .iter()
        .filter(|d| d.best_iou.is_none_or(|v| v >= iou_threshold))
        .map(|d| d.steps_taken)
        .collect();
    ts.sort_unstable();
    let mean_t = (!ts.is_empty()).then(|| ts.iter().sum::<usize>() as f64 / ts.len() as f64);
    StepStats {
        runs,
        successes: ts.len(),
        triggered,
        trigger_rate: rate(triggered),
        capped,
        cap_rate: rate(capped),
        mean_t,
        median_t: (!ts.is_empty()).then(|| ts[(ts.len() - 1) / 2]),
        min_t: ts.first().copied(),
        max_trigger_t: detections.iter().filter(|d| d.selected()).map(|d| d.steps_taken).max(),
    }
}
