//! Synthetic corpora: noisy backgrounds with solid-color rectangular targets.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnnotatedImage, DatasetError, DatasetResult, Target, CANVAS_PX};
use crate::env::BoxF;
use crate::raster::Raster;

/// Saturated target colors. Backgrounds never reach 0 or 1 in any channel,
/// so a pixel equal to one of these is always a target pixel.
pub const TARGET_PALETTE: [[f32; 3]; 6] = [
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, 1.0, 0.0],
    [1.0, 0.0, 1.0],
    [0.0, 1.0, 1.0],
];

const BACKGROUND_BASE: (f32, f32) = (0.3, 0.6);
const MAX_NOISE: f64 = 0.25;
const PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub count: usize,
    /// Target area as a fraction of the canvas area, sampled uniformly.
    pub target_area_fraction_range: [f64; 2],
    /// Inclusive range of targets painted per image.
    pub targets_per_image: [usize; 2],
    /// Half-width of the uniform per-channel background noise.
    pub background_noise_level: f64,
    pub rng_seed: u64,
    /// Width / height of targets, sampled log-uniformly.
    pub aspect_ratio_range: [f64; 2],
    pub label: String,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            count: 200,
            target_area_fraction_range: [0.02, 0.15],
            targets_per_image: [1, 1],
            background_noise_level: 0.1,
            rng_seed: 0,
            aspect_ratio_range: [0.5, 2.0],
            label: "target".into(),
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut errs = Vec::new();
        let [flo, fhi] = self.target_area_fraction_range;
        if self.count == 0 {
            errs.push("count must be positive".to_string());
        }
        if !(flo > 0.0 && flo <= fhi && fhi < 1.0) {
            errs.push(format!("target_area_fraction_range [{flo}, {fhi}] must satisfy 0 < lo <= hi < 1"));
        }
        let [tlo, thi] = self.targets_per_image;
        if tlo == 0 || tlo > thi || thi > TARGET_PALETTE.len() {
            errs.push(format!(
                "targets_per_image [{tlo}, {thi}] must satisfy 1 <= lo <= hi <= {}",
                TARGET_PALETTE.len()
            ));
        }
        if !(0.0..=MAX_NOISE).contains(&self.background_noise_level) {
            errs.push(format!("background_noise_level must lie in [0, {MAX_NOISE}]"));
        }
        let [alo, ahi] = self.aspect_ratio_range;
        if !(alo > 0.0 && alo <= ahi && ahi.is_finite()) {
            errs.push(format!("aspect_ratio_range [{alo}, {ahi}] must satisfy 0 < lo <= hi"));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

/// Generates `cfg.count` prepared 224x224 images. Image `i` depends only on
/// `(rng_seed, i)`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> DatasetResult<Vec<AnnotatedImage>> {
    cfg.validate().map_err(|e| DatasetError::InvalidConfig(e.join("; ")))?;
    (0..cfg.count).map(|i| synth_one(cfg, i)).collect()
}

fn synth_one(cfg: &SyntheticConfig, index: usize) -> DatasetResult<AnnotatedImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    rng.set_stream(index as u64);

    let n = CANVAS_PX;
    let noise = cfg.background_noise_level as f32;
    let base: [f32; 3] = std::array::from_fn(|_| rng.random_range(BACKGROUND_BASE.0..BACKGROUND_BASE.1));
    let mut pixels = Raster::new(n, n);
    for px in pixels.data_mut().chunks_exact_mut(3) {
        for c in 0..3 {
            let jitter = if noise > 0.0 { rng.random_range(-noise..noise) } else { 0.0 };
            px[c] = base[c] + jitter;
        }
    }

    let k = rng.random_range(cfg.targets_per_image[0]..=cfg.targets_per_image[1]);
    let mut boxes: Vec<BoxF> = Vec::with_capacity(k);
    let mut attempts = 0;
    while boxes.len() < k {
        if attempts == PLACEMENT_ATTEMPTS {
            return Err(DatasetError::InfeasiblePlacement { index, targets: k, attempts });
        }
        attempts += 1;
        let (w, h) = sample_size(cfg, &mut rng);
        let x = rng.random_range(0..=n - w) as f64;
        let y = rng.random_range(0..=n - h) as f64;
        let cand = BoxF::new(x, y, x + w as f64, y + h as f64);
        // Keep a one-pixel gap so targets never touch.
        let padded = BoxF::new(cand.xmin - 1.0, cand.ymin - 1.0, cand.xmax + 1.0, cand.ymax + 1.0);
        if boxes.iter().all(|b| b.intersection_area(&padded) == 0.0) {
            boxes.push(cand);
        }
    }

    let mut colors: Vec<usize> = (0..TARGET_PALETTE.len()).collect();
    let mut targets = Vec::with_capacity(k);
    for bbox in boxes {
        let color = TARGET_PALETTE[colors.swap_remove(rng.random_range(0..colors.len()))];
        for y in bbox.ymin as usize..bbox.ymax as usize {
            for x in bbox.xmin as usize..bbox.xmax as usize {
                pixels.set(x, y, color);
            }
        }
        targets.push(Target { label: cfg.label.clone(), bbox });
    }

    Ok(AnnotatedImage { name: format!("synth-{}-{index:05}", cfg.rng_seed), pixels, targets })
}

/// Integer target size for a sampled area and aspect ratio.
fn sample_size(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> (usize, usize) {
    let [flo, fhi] = cfg.target_area_fraction_range;
    let fraction = if flo < fhi { rng.random_range(flo..=fhi) } else { flo };
    let [alo, ahi] = cfg.aspect_ratio_range;
    let aspect = if alo < ahi { rng.random_range(alo.ln()..=ahi.ln()).exp() } else { alo };
    integer_size(fraction * (CANVAS_PX * CANVAS_PX) as f64, aspect, alo, ahi)
}

/// Pixel rectangle whose area is within 0.5% of `area` (when one exists
/// inside the aspect band) and whose aspect is closest to `aspect`;
/// otherwise the rectangle with the smallest area error.
pub(crate) fn integer_size(area: f64, aspect: f64, alo: f64, ahi: f64) -> (usize, usize) {
    let tol = (area * 0.005).max(1.0);
    let n = CANVAS_PX;
    let mut best: Option<((usize, usize), bool, f64)> = None;
    for w in 1..=n {
        let h = (area / w as f64).round().clamp(1.0, n as f64) as usize;
        let ar = w as f64 / h as f64;
        if ar < alo * (1.0 - 1e-9) || ar > ahi * (1.0 + 1e-9) {
            continue;
        }
        let err = ((w * h) as f64 - area).abs();
        let within = err <= tol;
        // Within tolerance: rank by aspect distance; otherwise by area error.
        let key = if within { (ar.ln() - aspect.ln()).abs() } else { err };
        let better = match best {
            None => true,
            Some((_, bw, bk)) => (within && !bw) || (within == bw && key < bk),
        };
        if better {
            best = Some(((w, h), within, key));
        }
    }
    best.map(|(s, _, _)| s).unwrap_or_else(|| {
        let side = area.sqrt().round().clamp(1.0, n as f64) as usize;
        (side, side)
    })
}
