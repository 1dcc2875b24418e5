//! Annotated images: loading, canvas preparation, train/test splitting and
//! synthetic corpus generation.

mod annotation;
mod synth;

pub use annotation::{load_annotations, save_dataset, AnnotationRecord, TargetRecord};
pub use synth::{generate_synthetic, SyntheticConfig, TARGET_PALETTE};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

use crate::env::BoxF;
use crate::raster::Raster;

/// Side of the square canvas images are prepared to.
pub const CANVAS_PX: usize = 224;

pub type DatasetResult<T> = Result<T, DatasetError>;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("record {record}: field `{field}`: {message}")]
    Parse { record: usize, field: String, message: String },
    #[error("record {record}: image file {path} is missing")]
    MissingImage { record: usize, path: PathBuf },
    #[error("record {record}: cannot decode {path}: {source}")]
    Image {
        record: usize,
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("record {record}: {message}")]
    Validation { record: usize, message: String },
    #[error("image `{name}` has a zero dimension")]
    ZeroDimension { name: String },
    #[error("image {index}: could not place {targets} non-overlapping targets after {attempts} attempts")]
    InfeasiblePlacement { index: usize, targets: usize, attempts: usize },
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("cannot split: {0}")]
    InvalidSplit(String),
    #[error("cannot encode {path}: {source}")]
    Encode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

/// One labelled ground-truth region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub label: String,
    pub bbox: BoxF,
}

/// Normalized pixels plus ground truth, indexed by name.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage {
    pub name: String,
    pub pixels: Raster,
    pub targets: Vec<Target>,
}

impl AnnotatedImage {
    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }

    /// Side of the canvas, `Some` only for square images.
    pub fn canvas_size(&self) -> Option<usize> {
        (self.width() == self.height()).then_some(self.width())
    }

    pub fn target_boxes(&self) -> Vec<BoxF> {
        self.targets.iter().map(|t| t.bbox).collect()
    }
}

/// Bilinearly resamples to the 224x224 canvas and rescales every box per axis.
pub fn prepare_canvas(img: &AnnotatedImage) -> DatasetResult<AnnotatedImage> {
    let (w, h) = (img.width(), img.height());
    if w == 0 || h == 0 {
        return Err(DatasetError::ZeroDimension { name: img.name.clone() });
    }
    let sx = CANVAS_PX as f64 / w as f64;
    let sy = CANVAS_PX as f64 / h as f64;
    Ok(AnnotatedImage {
        name: img.name.clone(),
        pixels: img.pixels.resize_bilinear(CANVAS_PX, CANVAS_PX),
        targets: img
            .targets
            .iter()
            .map(|t| Target { label: t.label.clone(), bbox: t.bbox.scaled(sx, sy) })
            .collect(),
    })
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<AnnotatedImage>,
    pub test: Vec<AnnotatedImage>,
    pub seed: u64,
}

/// Number of held-out images for a train fraction `ratio` over `n` images.
pub fn test_size(n: usize, ratio: f64) -> usize {
    // The 1e-9 nudge keeps e.g. 0.1 * 5 = 0.49999.. rounding like 0.5.
    (((1.0 - ratio) * n as f64) + 1e-9).round() as usize
}

/// Seeded shuffle, then the first `test_size` images go to the test set.
pub fn split_dataset(images: Vec<AnnotatedImage>, ratio: f64, seed: u64) -> DatasetResult<DatasetSplit> {
    if images.is_empty() {
        return Err(DatasetError::InvalidSplit("empty image list".into()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DatasetError::InvalidSplit(format!("ratio {ratio} outside (0, 1)")));
    }
    let n_test = test_size(images.len(), ratio);
    let mut order: Vec<usize> = (0..images.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut slots: Vec<Option<AnnotatedImage>> = images.into_iter().map(Some).collect();
    let mut test = Vec::with_capacity(n_test);
    let mut train = Vec::with_capacity(slots.len() - n_test);
    for (rank, idx) in order.into_iter().enumerate() {
        let img = slots[idx].take().expect("each index visited once");
        if rank < n_test {
            test.push(img);
        } else {
            train.push(img);
        }
    }
    Ok(DatasetSplit { train, test, seed })
}
