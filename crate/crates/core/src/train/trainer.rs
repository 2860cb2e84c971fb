use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{super_resolve, Checkpoint, InferOptions, RunConfig};
use crate::data::{extract_planes, sample_patches, sparse_section, split_dataset, Normal, OrientationVolume, QuatMap};
use crate::loss::physics_loss;
use crate::metrics::mean_misorientation_deg;
use crate::net::Network;
use crate::tensor::{Adam, Real, Tape, TensorError};
use crate::{io_err, Error, Result};

/// One line of the JSON-lines training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub patch_size: usize,
    pub steps: usize,
    /// Present on evaluation epochs.
    pub val_misorientation_deg: Option<f64>,
    pub best: bool,
}

/// RNG for one epoch; depends only on the run seed and the epoch index so
/// a resumed run draws the same patches.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

pub struct Trainer<T: Real> {
    pub config: RunConfig,
    pub net: Network<T>,
    pub adam: Adam<T>,
    /// Completed epochs.
    pub epoch: usize,
    pub best_val: f64,
    train_planes: Vec<QuatMap>,
    val_truth: OrientationVolume,
    val_lr: OrientationVolume,
}

impl<T: Real> Trainer<T> {
    /// Fresh run on `volume` (the ground truth).
    pub fn new(config: RunConfig, volume: &OrientationVolume) -> Result<Self> {
        config.validate()?;
        let net = Network::build(&config.network_config(), config.seed)?;
        let adam = Adam::new(config.optimizer.clone(), &net.params);
        let (train, val) = match &config.split {
            Some(spec) => {
                let [train, val, _test] = split_dataset(volume, spec)?;
                (train, val)
            }
            None => (volume.clone(), volume.clone()),
        };
        let mut train_planes = extract_planes(&train, Normal::Y);
        train_planes.extend(extract_planes(&train, Normal::X));
        let val_lr = sparse_section(&val, config.scale)?;
        Ok(Trainer {
            config,
            net,
            adam,
            epoch: 0,
            best_val: f64::INFINITY,
            train_planes,
            val_truth: val,
            val_lr,
        })
    }

    /// Continues from `ckpt`. The network part of its config must equal
    /// this run's.
    pub fn resume(config: RunConfig, volume: &OrientationVolume, ckpt: &Checkpoint) -> Result<Self> {
        let (want, have) = (config.network_config(), ckpt.config.network_config());
        if want != have {
            return Err(Error::ConfigMismatch {
                expected: serde_json::to_string(&want)?,
                found: serde_json::to_string(&have)?,
            });
        }
        let mut t = Self::new(config, volume)?;
        ckpt.load_params(&mut t.net.params)?;
        t.adam.state = ckpt.adam_state(&t.net.params)?;
        t.epoch = ckpt.epoch as usize;
        t.best_val = ckpt.best_val;
        Ok(t)
    }

    pub fn steps_per_epoch(&self) -> usize {
        match self.config.steps_per_epoch {
            0 => self.train_planes.len().div_ceil(self.config.batch),
            n => n,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.config, self.epoch as u64, self.best_val, &self.net.params, &self.adam)
    }

    fn ckpt_path(&self, name: &str) -> PathBuf {
        self.config.checkpoint_dir.join(name)
    }

    /// One optimizer step; returns the loss before the update.
    pub fn step(&mut self, lr: &crate::tensor::Tensor<T>, hr: &crate::tensor::Tensor<T>) -> std::result::Result<f64, TensorError> {
        let mut tape = Tape::new();
        let p = self.net.bind(&mut tape);
        let x = tape.constant(lr.clone());
        let y = self.net.forward(&mut tape, &p, x)?;
        let loss = physics_loss(&mut tape, y, hr, &self.config.loss)?;
        let value = tape.value(loss)[0].f64();
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: "loss" });
        }
        let mut grads = tape.backward(loss)?;
        self.net.params.collect_grads(&p, &mut grads);
        self.adam.step(&mut self.net.params)?;
        Ok(value)
    }

    /// Mean misorientation (degrees) of x-normal reconstructions of the
    /// validation block.
    pub fn validate(&self) -> Result<f64> {
        let sr = super_resolve(&self.net, &self.val_lr, Normal::X, &InferOptions::default())?;
        Ok(mean_misorientation_deg(&sr, &self.val_truth, &self.config.loss.symmetry)?)
    }

    /// Runs the next epoch without touching the filesystem.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.epoch;
        let cfg = &self.config;
        let patch = cfg.schedule.size_at(epoch, cfg.epochs);
        let mut rng = epoch_rng(cfg.seed, epoch);
        self.adam.config.lr = cfg.lr_schedule.lr_at(cfg.optimizer.lr, epoch, cfg.epochs);
        let steps = self.steps_per_epoch();
        let mut total = 0.0;
        for step in 0..steps {
            let cfg = &self.config;
            let (lr, hr) = sample_patches::<T, _>(&self.train_planes, epoch, cfg.epochs, &cfg.schedule, cfg.scale, cfg.batch, &mut rng)?;
            match self.step(&lr, &hr) {
                Ok(v) => total += v,
                Err(TensorError::NonFinite { .. } | TensorError::NonFiniteGradient { .. }) => {
                    let path = self.ckpt_path("diagnostic.qckpt");
                    self.checkpoint().save(&path)?;
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        step,
                        checkpoint: path,
                    });
                }
                Err(e) => return Err(e.into()),
            }
        }
        self.epoch += 1;
        let evaluate = self.epoch % self.config.eval_interval == 0 || self.epoch == self.config.epochs;
        let mut record = EpochRecord {
            epoch,
            loss: total / steps as f64,
            patch_size: patch,
            steps,
            val_misorientation_deg: None,
            best: false,
        };
        if evaluate {
            let v = self.validate()?;
            record.val_misorientation_deg = Some(v);
            if v < self.best_val {
                self.best_val = v;
                record.best = true;
            }
        }
        Ok(record)
    }

    /// Trains up to `config.epochs`, appending to the log and writing
    /// `last.qckpt` after every evaluation and `best.qckpt` on improvement.
    pub fn fit(&mut self, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<Vec<EpochRecord>> {
        let log_path = self.config.log_path();
        std::fs::create_dir_all(&self.config.checkpoint_dir).map_err(io_err(&self.config.checkpoint_dir))?;
        if let Some(dir) = log_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let mut log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(io_err(&log_path))?;
        let mut records = Vec::new();
        while self.epoch < self.config.epochs {
            let r = self.run_epoch()?;
            writeln!(log, "{}", serde_json::to_string(&r)?).map_err(io_err(&log_path))?;
            if r.best {
                self.checkpoint().save(self.ckpt_path("best.qckpt"))?;
            }
            if r.val_misorientation_deg.is_some() {
                self.checkpoint().save(self.ckpt_path("last.qckpt"))?;
            }
            on_epoch(&r);
            records.push(r);
        }
        Ok(records)
    }
}
