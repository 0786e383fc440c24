//! Run configuration: every component's settings in one TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::condnet::InferenceConfig;
use crate::disco::DiscoConfig;
use crate::error::{Error, Result};
use crate::eval::DecodeConfig;
use crate::loss::LossConfig;
use crate::scorer::ScorerConfig;
use crate::synthgen::{gen_dataset, ProposalConfig, SceneConfig, SceneRecord};
use crate::train::{FitConfig, TrainConfig};

/// Environment variable that replaces the configured seed.
pub const SEED_ENV: &str = "ANNOCONSIST_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Training scenes, generated from seeds `seed..seed + scenes`.
    pub scenes: usize,
    /// Held-out scenes, generated from `seed + test_seed_offset` onwards.
    pub test_scenes: usize,
    pub test_seed_offset: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            scenes: 50,
            test_scenes: 50,
            test_seed_offset: 10_000,
        }
    }
}

/// Default file locations, used when the command line leaves them out.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Drives data generation and training; replaces `train.seed`.
    pub seed: u64,
    pub data: DataConfig,
    pub scene: SceneConfig,
    pub proposals: ProposalConfig,
    pub scorer: ScorerConfig,
    pub inference: InferenceConfig,
    pub loss: LossConfig,
    pub disco: DiscoConfig,
    pub train: TrainConfig,
    pub eval: DecodeConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.proposals.validate()?;
        if self.data.scenes == 0 {
            return Err(Error::InvalidConfig("data.scenes must be positive".into()));
        }
        self.fit_config().validate()
    }

    /// Apply the seed override from the environment, if set.
    pub fn with_env_seed(mut self) -> Result<Self> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{SEED_ENV} must be an unsigned integer, got {v:?}")))?;
        }
        Ok(self)
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            scorer: self.scorer.clone(),
            inference: self.inference.clone(),
            loss: self.loss.clone(),
            disco: self.disco.clone(),
            train: TrainConfig {
                seed: self.seed,
                ..self.train.clone()
            },
            decode: self.eval.clone(),
        }
    }

    pub fn train_set(&self) -> Result<Vec<SceneRecord>> {
        gen_dataset(&self.scene, &self.proposals, self.seed, self.data.scenes)
    }

    pub fn test_set(&self) -> Result<Vec<SceneRecord>> {
        gen_dataset(
            &self.scene,
            &self.proposals,
            self.seed + self.data.test_seed_offset,
            self.data.test_scenes,
        )
    }
}
