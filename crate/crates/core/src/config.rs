//! Experiment configuration: one TOML file with `[data]`, `[cube]`, `[model]`,
//! `[training]`, `[evaluation]` and `[analytics]` sections.
//!
//! `[model]` may name a `preset` ("tiny" or "default"); other keys in the
//! section then override the preset field by field. The effective
//! configuration prints back without the preset key, so a dumped file
//! reloads to the same value and the same hash.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{sha256_hex, CubeConfig, DataConfig, SkeletonSpec};
use crate::metrics::{AnalyticsConfig, EvaluationConfig};
use crate::model::{feature_side, ModelConfig, ModelDims};
use crate::training::TrainConfig;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub cube: CubeConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub analytics: AnalyticsConfig,
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// toml reports errors over several lines with a source excerpt; keep one line.
fn describe(e: toml::de::Error) -> Error {
    Error::config(e.to_string().trim().replace('\n', " "))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(describe)?;
        if !table.contains_key("data") {
            return Err(Error::config("missing required section [data]"));
        }
        if let Some(toml::Value::Table(model)) = table.get_mut("model") {
            if let Some(preset) = model.remove("preset") {
                let name = preset.as_str().ok_or_else(|| Error::config("model.preset must be a string"))?;
                let base = ModelConfig::preset(name)?;
                let mut merged = toml::Table::try_from(&base).map_err(|e| Error::config(e.to_string()))?;
                merge(&mut merged, std::mem::take(model));
                *model = merged;
            }
        }
        let cfg: ExperimentConfig = toml::Value::Table(table).try_into().map_err(describe)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Every section's own checks, then constraints that span sections.
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.cube.validate()?;
        self.model.validate()?;
        self.training.validate()?;
        self.evaluation.validate()?;
        self.analytics.validate()?;
        let side = feature_side(&self.model, self.data.input_size)?;
        let g = self.cube.grid;
        if g < side || g % side != 0 {
            return Err(Error::config(format!(
                "cube.grid ({g}) must be a multiple of the feature map side ({side}) for data.input_size {}",
                self.data.input_size
            )));
        }
        if self.model.views != 2 {
            return Err(Error::config("model.views must match the two rendered views"));
        }
        Ok(())
    }

    pub fn model_dims(&self) -> ModelDims {
        ModelDims {
            input_size: self.data.input_size,
            joints: SkeletonSpec::preset(self.data.skeleton).len(),
            grid: self.cube.grid,
        }
    }

    /// The effective configuration as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the effective configuration text.
    pub fn hash(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        Sha256::digest(self.to_toml().as_bytes()).into()
    }

    pub fn hash_hex(&self) -> String {
        hex::encode(self.hash())
    }

    /// Hash of the `[data]` section alone, stamped into corpora so that a
    /// checkpoint can be matched to the data it was trained on.
    pub fn data_hash(&self) -> String {
        sha256_hex(toml::to_string(&self.data).expect("data section serializes").as_bytes())
    }
}
