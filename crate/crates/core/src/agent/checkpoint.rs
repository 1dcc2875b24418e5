use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use super::{Adam, AgentError, Architecture, QFunction, TrainConfig};
use crate::encoder::ExtractorSpec;
use crate::env::RewardParams;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume training or reproduce inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub architecture: Architecture,
    pub input_dim: usize,
    pub params: Vec<f64>,
    pub target_params: Vec<f64>,
    pub optimizer: Adam,
    pub extractor: ExtractorSpec,
    pub extractor_id: String,
    pub reward: RewardParams,
    pub train: TrainConfig,
    pub rng_seed: u64,
    pub images_completed: usize,
    pub episodes_completed: usize,
}

impl Checkpoint {
    pub fn policy(&self) -> Result<QFunction, AgentError> {
        QFunction::from_parts(self.architecture, self.input_dim, self.params.clone())
    }

    pub fn target(&self) -> Result<QFunction, AgentError> {
        QFunction::from_parts(self.architecture, self.input_dim, self.target_params.clone())
    }

    /// Writes atomically through a sibling temporary file.
    pub fn save(&self, path: &Path) -> Result<(), AgentError> {
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(fs::File::create(&tmp)?);
            serde_json::to_writer(&mut w, self).map_err(|e| AgentError::Checkpoint(e.to_string()))?;
            w.flush()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let f = fs::File::open(path)
            .map_err(|e| AgentError::Checkpoint(format!("cannot open {}: {e}", path.display())))?;
        let ck: Checkpoint = serde_json::from_reader(BufReader::new(f))
            .map_err(|e| AgentError::Checkpoint(format!("{}: {e}", path.display())))?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(AgentError::Checkpoint(format!(
                "{}: format version {} is not supported (expected {CHECKPOINT_VERSION})",
                path.display(),
                ck.format_version
            )));
        }
        ck.policy()?;
        ck.target()?;
        if ck.optimizer.len() != ck.params.len() {
            return Err(AgentError::Checkpoint("optimizer state does not match parameter count".into()));
        }
        Ok(ck)
    }
}
