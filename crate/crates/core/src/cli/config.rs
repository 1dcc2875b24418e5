use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::agent::TrainConfig;
use crate::dataset::SyntheticConfig;
use crate::encoder::ExtractorSpec;
use crate::env::RewardParams;
use crate::inference::InferenceConfig;

/// Overrides every other source of the output directory.
pub const OUTPUT_DIR_ENV: &str = "ACTIVE_DETECT_OUTPUT_DIR";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Training annotations (`.jsonl`). Without one, `train` generates a
    /// synthetic corpus from `[synthetic]`.
    pub dataset: Option<PathBuf>,
    /// Held-out annotations used by `eval` when `--data` is absent.
    pub test_dataset: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

/// Everything one run needs; every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub reward: RewardParams,
    pub train: TrainConfig,
    pub synthetic: SyntheticConfig,
    pub extractor: ExtractorSpec,
    pub inference: InferenceConfig,
}

#[derive(Debug)]
pub enum ConfigError {
    Read(PathBuf, std::io::Error),
    Parse(PathBuf, String),
    Invalid(Vec<String>),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Read(p, e) => write!(f, "cannot read config {}: {e}", p.display()),
            ConfigError::Parse(p, e) => write!(f, "config {}: {e}", p.display()),
            ConfigError::Invalid(errs) => {
                write!(f, "invalid config:")?;
                for e in errs {
                    write!(f, "\n  - {e}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for ConfigError {}

impl RunConfig {
    /// Parses a TOML file. Relative paths inside resolve against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read(path.to_path_buf(), e))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse(path.to_path_buf(), e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        rebase(&mut cfg.paths.dataset);
        rebase(&mut cfg.paths.test_dataset);
        rebase(&mut cfg.paths.output);
        if let ExtractorSpec::External { path, .. } = &mut cfg.extractor {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Field-level checks plus existence of every referenced input path.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        let mut section = |name: &str, r: Result<(), Vec<String>>| {
            if let Err(v) = r {
                errs.extend(v.into_iter().map(|e| format!("[{name}] {e}")));
            }
        };
        section("reward", self.reward.validate());
        section("train", self.train.validate());
        section("synthetic", self.synthetic.validate());
        section("inference", self.inference.validate());
        match &self.extractor {
            ExtractorSpec::Desk { output_dim: 0, .. } | ExtractorSpec::External { output_dim: 0, .. } => {
                errs.push("[extractor] output_dim must be positive".into())
            }
            ExtractorSpec::External { path, .. } if !path.is_file() => {
                errs.push(format!("[extractor] backbone {} does not exist", path.display()))
            }
            _ => {}
        }
        for (name, p) in [("dataset", &self.paths.dataset), ("test_dataset", &self.paths.test_dataset)] {
            if let Some(p) = p {
                if !p.is_file() {
                    errs.push(format!("[paths] {name} {} does not exist", p.display()));
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }
}
