//! Run configuration, checkpoints, the training loop and tiled inference.

mod checkpoint;
mod infer;
mod trainer;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{PatchSchedule, SplitSpec};
use crate::loss::LossConfig;
use crate::net::NetworkConfig;
use crate::tensor::AdamConfig;
use crate::{io_err, Error, Result};

pub use checkpoint::{Checkpoint, NamedTensor, QCKPT_MAGIC, QCKPT_VERSION};
pub use infer::{super_resolve, InferOptions, TILE_OVERLAP};
pub use trainer::{epoch_rng, EpochRecord, Trainer};

/// Everything that defines a training run. Missing JSON keys take the
/// values of [`RunConfig::default`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// `network.scale` is replaced by the top-level `scale`.
    pub network: NetworkConfig,
    /// Adam settings as top-level keys (`lr`, `beta1`, `beta2`, ...).
    #[serde(flatten)]
    pub optimizer: AdamConfig,
    pub batch: usize,
    pub epochs: usize,
    /// Optimizer steps per epoch; 0 means one pass over the training
    /// planes (`ceil(planes / batch)`).
    pub steps_per_epoch: usize,
    pub schedule: PatchSchedule,
    pub scale: usize,
    pub seed: u64,
    pub loss: LossConfig,
    /// `null` trains and validates on the whole volume.
    pub split: Option<SplitSpec>,
    /// Ground-truth volume (QVOL).
    pub data: PathBuf,
    pub checkpoint_dir: PathBuf,
    /// Defaults to `<checkpoint_dir>/train_log.jsonl`.
    pub log: Option<PathBuf>,
    /// Validate every this many epochs (and after the last).
    pub eval_interval: usize,
    /// Train in 64-bit precision.
    pub verify: bool,
    pub lr_schedule: LrSchedule,
}

/// Learning rate as a function of the epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from `lr` at epoch 0 down to `final_lr` at the last epoch.
    Cosine { final_lr: f64 },
}

impl LrSchedule {
    pub fn lr_at(&self, base: f64, epoch: usize, total_epochs: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine { final_lr } => {
                let t = epoch as f64 / total_epochs.saturating_sub(1).max(1) as f64;
                final_lr + 0.5 * (base - final_lr) * (1.0 + (std::f64::consts::PI * t.min(1.0)).cos())
            }
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            network: NetworkConfig::default(),
            optimizer: AdamConfig::default(),
            batch: 4,
            epochs: 2000,
            steps_per_epoch: 0,
            schedule: PatchSchedule::default(),
            scale: 4,
            seed: 0,
            loss: LossConfig::default(),
            split: Some(SplitSpec::default()),
            data: PathBuf::from("volume.qvol"),
            checkpoint_dir: PathBuf::from("checkpoints"),
            log: None,
            eval_interval: 10,
            verify: false,
            lr_schedule: LrSchedule::Constant,
        }
    }
}

impl RunConfig {
    pub fn paper_defaults() -> Self {
        RunConfig::default()
    }

    /// Small network and short curriculum; about 25 minutes on one CPU core
    /// in 64-bit mode.
    pub fn desk() -> Self {
        RunConfig {
            network: NetworkConfig {
                feature_channels: 32,
                n_qrsa_blocks: 2,
                scale: 2,
                heads: 1,
                ..NetworkConfig::default()
            },
            optimizer: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
            epochs: 600,
            steps_per_epoch: 50,
            schedule: PatchSchedule {
                sizes: vec![16, 32],
                epoch_boundaries: vec![0.95],
            },
            scale: 2,
            eval_interval: 20,
            lr_schedule: LrSchedule::Cosine { final_lr: 1e-5 },
            ..RunConfig::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper-defaults" => Ok(Self::paper_defaults()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::Config(format!("unknown preset {other:?} (paper-defaults, desk)"))),
        }
    }

    /// Network configuration actually built for this run.
    pub fn network_config(&self) -> NetworkConfig {
        NetworkConfig {
            scale: self.scale,
            ..self.network.clone()
        }
    }

    pub fn log_path(&self) -> PathBuf {
        self.log
            .clone()
            .unwrap_or_else(|| self.checkpoint_dir.join("train_log.jsonl"))
    }

    pub fn validate(&self) -> Result<()> {
        self.network_config().validate()?;
        self.schedule.validate()?;
        if self.batch == 0 || self.epochs == 0 || self.eval_interval == 0 {
            return Err(Error::Config("batch, epochs and eval_interval must be positive".into()));
        }
        if let Some(bad) = self.schedule.sizes.iter().find(|&&p| p % self.scale != 0) {
            return Err(Error::Config(format!("patch size {bad} is not divisible by scale {}", self.scale)));
        }
        if !(self.optimizer.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.optimizer.lr)));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_json_is_paper_defaults() {
        let c = RunConfig::from_json("{}").unwrap();
        assert_eq!(c, RunConfig::paper_defaults());
        assert_eq!(c.optimizer.lr, 2e-4);
        assert_eq!((c.optimizer.beta1, c.optimizer.beta2), (0.9, 0.99));
        assert_eq!((c.batch, c.epochs, c.scale), (4, 2000, 4));
    }

    #[test]
    fn json_round_trip_and_flat_optimizer_keys() {
        let c = RunConfig::desk();
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
        let c = RunConfig::from_json(r#"{"lr": 0.01, "scale": 2, "schedule": {"sizes": [8, 16], "epoch_boundaries": [0.5]}}"#).unwrap();
        assert_eq!(c.optimizer.lr, 0.01);
        assert_eq!(c.network_config().scale, 2);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let s = LrSchedule::Cosine { final_lr: 1e-5 };
        assert_eq!(s.lr_at(1e-3, 0, 11), 1e-3);
        assert!((s.lr_at(1e-3, 5, 11) - (1e-5 + 0.5 * (1e-3 - 1e-5))).abs() < 1e-15);
        assert!((s.lr_at(1e-3, 10, 11) - 1e-5).abs() < 1e-15);
        assert_eq!(LrSchedule::Constant.lr_at(2e-4, 7, 11), 2e-4);
    }

    #[test]
    fn rejects_patch_not_divisible_by_scale() {
        let err = RunConfig::from_json(r#"{"schedule": {"sizes": [18], "epoch_boundaries": []}}"#).unwrap_err();
        assert!(err.to_string().contains("divisible"), "{err}");
    }
}
