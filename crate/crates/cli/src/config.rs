use std::fs;
use std::path::Path;

use anyhow::{ensure, Context, Result};
use serde::{Deserialize, Serialize};
use shiftwatch_core::icad::DetectorConfig;
use shiftwatch_core::scenario::SceneConfig;
use shiftwatch_core::vae::TrainingConfig;

/// How evaluation episodes draw their initial distance and closing speed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeSampling {
    /// Initial distance range in meters.
    pub d0: [f64; 2],
    /// Closing speed range in m/s.
    pub v0: [f64; 2],
}

impl Default for EpisodeSampling {
    fn default() -> Self {
        Self {
            d0: [35.0, 50.0],
            v0: [5.0, 15.0],
        }
    }
}

/// Everything a command needs. Loaded from JSON; missing keys take defaults.
///
/// The top-level `seed` drives every random stream, including training;
/// `training.seed` is overwritten with it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Frames generated before the 80/20 proper/calibration split.
    pub dataset_size: usize,
    pub scene: SceneConfig,
    pub training: TrainingConfig,
    pub detector: DetectorConfig,
    pub episodes: EpisodeSampling,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset_size: 6000,
            scene: SceneConfig::default(),
            training: TrainingConfig::default(),
            detector: DetectorConfig::default(),
            episodes: EpisodeSampling::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let config: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(config)
    }

    /// Defaults when `path` is `None`.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(seed) = seed {
            self.seed = seed;
        }
        self.training.seed = self.seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.training.validate()?;
        self.detector.validate()?;
        ensure!(self.dataset_size >= 2, "dataset_size must be at least 2 for the proper/calibration split");
        let [d_lo, d_hi] = self.episodes.d0;
        ensure!(0.0 < d_lo && d_lo <= d_hi && d_hi <= 50.0, "episodes.d0 must lie in (0, 50]");
        let [v_lo, v_hi] = self.episodes.v0;
        ensure!(0.0 < v_lo && v_lo <= v_hi, "episodes.v0 must be positive");
        Ok(())
    }
}
