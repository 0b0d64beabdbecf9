use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use stvg::model::ModelConfig;
use stvg::proposals::{Perturbation, WindowClassifierConfig};
use stvg::synth::SynthConfig;

pub const DEFAULT_SEED: u64 = 7;

/// Everything settable from the `--config` TOML file. Command-line flags win
/// over the file; the top-level `seed` wins over `STVG_SEED`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    /// Seed of the synthetic feature noise, shared by training and evaluation.
    pub feature_seed: u64,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub windows: WindowClassifierConfig,
    pub perturbation: Perturbation,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: FileConfig = toml::from_str(&text).map_err(|e| crate::UsageError(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    /// Flag, then config file, then `STVG_SEED`, then the built-in default.
    pub fn resolve_seed(&self, flag: Option<u64>) -> anyhow::Result<u64> {
        if let Some(s) = flag.or(self.seed) {
            return Ok(s);
        }
        match std::env::var("STVG_SEED") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| crate::UsageError(format!("STVG_SEED must be an unsigned integer, got `{v}`")).into()),
            Err(_) => Ok(DEFAULT_SEED),
        }
    }
}
