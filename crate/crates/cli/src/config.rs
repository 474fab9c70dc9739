//! Run configuration: defaults, then the JSON file, then command-line flags.

use std::path::Path;

use anyhow::{Context, Result};
use dffcn_core::dffcn::{NetConfig, Profile, TrainConfig};
use dffcn_core::experiment::{ExperimentConfig, Tiling};
use dffcn_core::localizer::RansacConfig;
use dffcn_core::phantom::PhantomConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every stochastic step derives its own stream from it.
    pub seed: u64,
    pub d: usize,
    pub profile: Profile,
    pub folds: usize,
    pub phantom: PhantomConfig,
    pub train: TrainConfig,
    pub tiling: Tiling,
    pub threshold: f32,
    pub ransac: RansacConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            d: 3,
            profile: Profile::Tiny,
            folds: 3,
            phantom: PhantomConfig::default(),
            train: TrainConfig { lr: 1e-3, ..TrainConfig::default() },
            tiling: Tiling::default(),
            threshold: 0.5,
            ransac: RansacConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn net(&self) -> NetConfig {
        NetConfig { gap_d: self.d, ..NetConfig::for_profile(self.profile) }
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            net: self.net(),
            train: TrainConfig { d: self.d, ..self.train.clone() },
            tiling: self.tiling,
            threshold: self.threshold,
            ransac: self.ransac,
            folds: self.folds,
        }
    }
}

/// Overwrite `slot` when the flag was given.
pub fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}
