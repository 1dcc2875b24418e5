//! Frozen feature extractors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

use super::{crop_observation, observation_span, EncoderError, PATCH_PX};
use crate::env::BoxF;
use crate::raster::Raster;

/// A frozen embedding of an observation patch. Implementations must be
/// deterministic: the same patch always yields the same vector.
pub trait FeatureExtractor: Send + Sync {
    fn id(&self) -> String;
    fn output_dim(&self) -> usize;
    /// Side of the square patch `extract` expects.
    fn input_size(&self) -> usize {
        PATCH_PX
    }
    fn deterministic(&self) -> bool {
        true
    }
    fn extract(&self, patch: &Raster) -> Result<Vec<f32>, EncoderError>;
    /// Features of the observation `frame` selects in `img`.
    fn extract_region(&self, img: &Raster, frame: &BoxF) -> Result<Vec<f32>, EncoderError> {
        self.extract(&crop_observation(img, frame, self.input_size()))
    }
}

/// Serializable extractor selection, stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExtractorSpec {
    Desk { output_dim: usize, seed: u64 },
    External { path: PathBuf, output_dim: usize },
}

impl Default for ExtractorSpec {
    fn default() -> Self {
        ExtractorSpec::Desk { output_dim: 64, seed: 0 }
    }
}

impl ExtractorSpec {
    pub fn output_dim(&self) -> usize {
        match self {
            ExtractorSpec::Desk { output_dim, .. } | ExtractorSpec::External { output_dim, .. } => *output_dim,
        }
    }
}

pub fn build_extractor(spec: &ExtractorSpec) -> Result<Box<dyn FeatureExtractor>, EncoderError> {
    match spec {
        ExtractorSpec::Desk { output_dim, seed } => Ok(Box::new(DeskExtractor::new(*output_dim, *seed))),
        #[cfg(feature = "onnx")]
        ExtractorSpec::External { path, output_dim } => Ok(Box::new(OnnxExtractor::load(path, *output_dim)?)),
        #[cfg(not(feature = "onnx"))]
        ExtractorSpec::External { path, .. } => Err(EncoderError::BackboneLoad {
            path: path.clone(),
            message: "built without the `onnx` feature".into(),
        }),
    }
}

/// Training-free embedding: area-pool the patch to a 16x16x3 grid and apply
/// a fixed Gaussian projection seeded by `seed`.
#[derive(Debug, Clone)]
pub struct DeskExtractor {
    output_dim: usize,
    seed: u64,
    /// Row-major `output_dim x GRID_DIM`.
    projection: Vec<f32>,
}

impl DeskExtractor {
    pub const GRID: usize = 16;
    pub const GRID_DIM: usize = Self::GRID * Self::GRID * 3;

    pub fn new(output_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (Self::GRID_DIM as f64).sqrt();
        let projection = (0..output_dim * Self::GRID_DIM)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (z * scale) as f32
            })
            .collect();
        Self { output_dim, seed, projection }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn project(&self, grid: &[f32]) -> Vec<f32> {
        self.projection
            .chunks_exact(Self::GRID_DIM)
            .map(|row| row.iter().zip(grid).map(|(w, x)| w * x).sum())
            .collect()
    }
}

impl FeatureExtractor for DeskExtractor {
    fn id(&self) -> String {
        format!("desk:{}:{}", self.output_dim, self.seed)
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn extract(&self, patch: &Raster) -> Result<Vec<f32>, EncoderError> {
        if patch.width() != PATCH_PX || patch.height() != PATCH_PX {
            return Err(EncoderError::PatchSize { expected: PATCH_PX, width: patch.width(), height: patch.height() });
        }
        Ok(self.project(&patch.area_pool(Self::GRID)))
    }

    fn extract_region(&self, img: &Raster, frame: &BoxF) -> Result<Vec<f32>, EncoderError> {
        let (x0, x1, y0, y1) = observation_span(img, frame);
        Ok(self.project(&img.crop_resize_pool(x0, x1, y0, y1, PATCH_PX, Self::GRID)))
    }
}

#[cfg(feature = "onnx")]
pub use onnx::OnnxExtractor;

#[cfg(feature = "onnx")]
mod onnx {
    use std::path::{Path, PathBuf};
    use tract_onnx::prelude::*;

    use super::{EncoderError, FeatureExtractor, PATCH_PX};
    use crate::raster::Raster;

    type Plan = TypedSimplePlan<TypedModel>;

    /// Frozen backbone from an ONNX file taking a `1x3x224x224` float input
    /// in `[0, 1]` and producing `output_dim` values (any output shape whose
    /// element count matches). Input normalization belongs in the graph.
    pub struct OnnxExtractor {
        path: PathBuf,
        output_dim: usize,
        plan: Plan,
    }

    impl std::fmt::Debug for OnnxExtractor {
        fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
            f.debug_struct("OnnxExtractor").field("path", &self.path).field("output_dim", &self.output_dim).finish()
        }
    }

    impl OnnxExtractor {
        /// Loads and optimizes the graph, then probes it once so a shape
        /// mismatch surfaces here rather than mid-episode.
        pub fn load(path: &Path, output_dim: usize) -> Result<Self, EncoderError> {
            let load_err = |e: &dyn std::fmt::Display| EncoderError::BackboneLoad {
                path: path.to_path_buf(),
                message: e.to_string(),
            };
            if !path.is_file() {
                return Err(load_err(&"file not found"));
            }
            let plan = tract_onnx::onnx()
                .model_for_path(path)
                .and_then(|m| m.with_input_fact(0, f32::fact([1, 3, PATCH_PX, PATCH_PX]).into()))
                .and_then(|m| m.into_optimized())
                .and_then(|m| m.into_runnable())
                .map_err(|e| load_err(&e))?;
            let ex = Self { path: path.to_path_buf(), output_dim, plan };
            let probe = ex.extract(&Raster::new(PATCH_PX, PATCH_PX)).map_err(|e| load_err(&e))?;
            if probe.len() != output_dim {
                return Err(load_err(&format!("backbone emits {} values, configured output_dim is {output_dim}", probe.len())));
            }
            Ok(ex)
        }
    }

    impl FeatureExtractor for OnnxExtractor {
        fn id(&self) -> String {
            format!("external:{}", self.path.display())
        }

        fn output_dim(&self) -> usize {
            self.output_dim
        }

        fn extract(&self, patch: &Raster) -> Result<Vec<f32>, EncoderError> {
            if patch.width() != PATCH_PX || patch.height() != PATCH_PX {
                return Err(EncoderError::PatchSize { expected: PATCH_PX, width: patch.width(), height: patch.height() });
            }
            let n = PATCH_PX;
            let input = tract_ndarray::Array4::from_shape_fn((1, 3, n, n), |(_, c, y, x)| patch.get(x, y)[c]);
            let out = self
                .plan
                .run(tvec!(Tensor::from(input).into()))
                .map_err(|e| EncoderError::Backbone(e.to_string()))?;
            let view = out[0].to_array_view::<f32>().map_err(|e| EncoderError::Backbone(e.to_string()))?;
            Ok(view.iter().copied().collect())
        }
    }
}
