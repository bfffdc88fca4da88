//! The run configuration file (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::denoiser::DenoiserConfig;
use crate::error::{Error, Result};
use crate::sampler::SamplerConfig;
use crate::schedule::ScheduleParams;
use crate::trainer::TrainConfig;

pub const CONFIG_FORMAT_VERSION: u32 = 1;

/// Metric names accepted in `[eval] metrics`.
pub const METRICS: [&str; 3] = ["psnr", "ssim", "consistency"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Directory of PNG training images.
    pub train_dir: PathBuf,
    /// Side of the square LR inputs.
    pub lr_size: usize,
    /// Where checkpoints and the loss log are written.
    pub out_dir: PathBuf,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { train_dir: PathBuf::from("data/train"), lr_size: 16, out_dir: PathBuf::from("runs/default") }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub metrics: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { metrics: METRICS.iter().map(|s| s.to_string()).collect() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    #[serde(default)]
    pub model: DenoiserConfig,
    #[serde(default)]
    pub schedule: ScheduleParams,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            format_version: CONFIG_FORMAT_VERSION,
            model: DenoiserConfig::default(),
            schedule: ScheduleParams::default(),
            train: TrainConfig::default(),
            sampler: SamplerConfig::default(),
            data: DataConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != CONFIG_FORMAT_VERSION {
            return Err(Error::Config(format!("unsupported format_version {}", self.format_version)));
        }
        self.model.validate()?;
        self.train.validate()?;
        self.schedule.build().map_err(|e| Error::Config(format!("schedule: {e}")))?;
        if self.data.lr_size == 0 {
            return Err(Error::Config("data.lr_size must be positive".into()));
        }
        if let Some(m) = self.eval.metrics.iter().find(|m| !METRICS.contains(&m.as_str())) {
            return Err(Error::Config(format!("unknown metric {m:?}; expected one of {METRICS:?}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_documents_use_defaults() {
        let cfg = RunConfig::parse("format_version = 1\n[train]\nseed = 9\n").unwrap();
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.model, DenoiserConfig::default());
    }

    #[test]
    fn rejects_unknown_keys_and_versions() {
        assert!(matches!(RunConfig::parse("format_version = 1\n[train]\nsed = 9\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("format_version = 1\nextra = 1\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("format_version = 2\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("[train]\nseed = 9\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("format_version = 1\n[eval]\nmetrics = [\"lpips\"]\n"), Err(Error::Config(_))));
    }
}
