//! Agent state: the cropped observation embedded by a frozen extractor,
//! concatenated with the flattened action history.

mod extractor;
mod history;

pub use extractor::{build_extractor, DeskExtractor, ExtractorSpec, FeatureExtractor};
#[cfg(feature = "onnx")]
pub use extractor::OnnxExtractor;
pub use history::{HistoryWindow, HISTORY_DIM, HISTORY_LEN};

use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

use crate::env::BoxF;
use crate::raster::Raster;

/// Input side expected by the shipped extractors.
pub const PATCH_PX: usize = 224;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("feature vector has length {got}, expected {expected}")]
    FeatureLength { expected: usize, got: usize },
    #[error("patch is {width}x{height}, extractor expects {expected}x{expected}")]
    PatchSize { expected: usize, width: usize, height: usize },
    #[error("cannot load backbone {path}: {message}")]
    BackboneLoad { path: PathBuf, message: String },
    #[error("backbone inference failed: {0}")]
    Backbone(String),
    #[error("unknown extractor `{0}`")]
    UnknownExtractor(String),
}

/// Features followed by the flattened history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector(pub Vec<f32>);

impl StateVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn features(&self) -> &[f32] {
        &self.0[..self.0.len() - HISTORY_DIM]
    }

    pub fn history(&self) -> &[f32] {
        &self.0[self.0.len() - HISTORY_DIM..]
    }
}

/// Pixels whose centers lie inside `frame`, bilinearly stretched to
/// `size x size`. Frames always cover at least one pixel center.
pub fn crop_observation(img: &Raster, frame: &BoxF, size: usize) -> Raster {
    let (x0, x1, y0, y1) = observation_span(img, frame);
    img.crop(x0, x1, y0, y1).resize_bilinear(size, size)
}

/// Pixel block `(x0, x1, y0, y1)` that [`crop_observation`] stretches.
pub fn observation_span(img: &Raster, frame: &BoxF) -> (usize, usize, usize, usize) {
    let (x0, x1, y0, y1) = frame.pixel_span(img.width(), img.height());
    // Environment frames keep a 1px minimum extent, so the span is non-empty;
    // widen defensively for hand-built frames.
    let x1 = x1.max((x0 + 1).min(img.width()));
    let x0 = x0.min(x1 - 1);
    let y1 = y1.max((y0 + 1).min(img.height()));
    let y0 = y0.min(y1 - 1);
    (x0, x1, y0, y1)
}

pub fn assemble_state(features: &[f32], history: &HistoryWindow, expected_dim: usize) -> Result<StateVector, EncoderError> {
    if features.len() != expected_dim {
        return Err(EncoderError::FeatureLength { expected: expected_dim, got: features.len() });
    }
    let mut v = Vec::with_capacity(features.len() + HISTORY_DIM);
    v.extend_from_slice(features);
    v.extend_from_slice(&history.flatten());
    Ok(StateVector(v))
}

/// Crop, embed and concatenate in one call.
pub fn encode_state(
    fe: &dyn FeatureExtractor,
    img: &Raster,
    frame: &BoxF,
    history: &HistoryWindow,
) -> Result<StateVector, EncoderError> {
    let features = fe.extract_region(img, frame)?;
    assemble_state(&features, history, fe.output_dim())
}
