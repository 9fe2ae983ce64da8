//! TOML run configuration covering every module, with one root seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentationPolicy;
use crate::finetune::FinetuneConfig;
use crate::pretrain::PretrainConfig;
use crate::quality::QualityThresholds;
use crate::rng::fnv1a64;
use crate::sweep::SweepConfig;
use crate::synth::SynthConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize config: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Labelled manifest `image_id,image_uri,grade,patient_id,eye`.
    pub manifest: Option<PathBuf>,
    /// Split tags `image_id,split`.
    pub splits: Option<PathBuf>,
    /// Manifest of images for pretraining (grades ignored); defaults to the
    /// training records of `manifest`.
    pub unlabeled: Option<PathBuf>,
    /// Directory of style images for NST.
    pub styles: Option<PathBuf>,
    /// Style images are shrunk so their longer side is at most this.
    pub style_max_side: usize,
    /// Patient-level split fractions used by `ingest` when the manifest
    /// carries no split tags.
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            splits: None,
            unlabeled: None,
            styles: None,
            style_max_side: 256,
            train_fraction: 0.7,
            val_fraction: 0.1,
            test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub resamples: usize,
    pub roc_svg: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            resamples: crate::stats::DEFAULT_RESAMPLES,
            roc_svg: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub quality: QualityThresholds,
    pub augment: AugmentationPolicy,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
    pub synth: SynthConfig,
}


impl RunConfig {
    /// Parses TOML; unknown keys are rejected.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(text)?;
        cfg.set_seed(cfg.seed);
        Ok(cfg)
    }

    /// Reads a config file; relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            cfg.data.rebase(dir);
        }
        Ok(cfg)
    }

    /// Sets the root seed and propagates it to every module.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.pretrain.seed = seed;
        self.finetune.seed = seed;
        self.synth.seed = seed;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        if self.seed > i64::MAX as u64 {
            return Err(ConfigError::Invalid(format!("seed {} exceeds the TOML integer range", self.seed)));
        }
        self.augment.validate().map_err(|e| invalid(&e))?;
        self.pretrain.validate().map_err(|e| invalid(&e))?;
        self.finetune.validate().map_err(|e| invalid(&e))?;
        self.sweep.validate().map_err(|e| invalid(&e))?;
        if self.eval.resamples < 100 {
            return Err(ConfigError::Invalid(format!("eval.resamples {} < 100", self.eval.resamples)));
        }
        Ok(())
    }

    /// Deterministic TOML rendering; parsing it gives back an equal config.
    pub fn to_canonical_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    /// Run id: FNV-1a of the canonical TOML, as 16 hex digits.
    pub fn digest(&self) -> Result<String, ConfigError> {
        Ok(format!("{:016x}", fnv1a64(self.to_canonical_toml()?.as_bytes())))
    }
}

impl DataConfig {
    fn rebase(&mut self, dir: &Path) {
        for p in [&mut self.manifest, &mut self.splits, &mut self.unlabeled, &mut self.styles].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
    }
}
