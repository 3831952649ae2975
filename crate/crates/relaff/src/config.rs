//! Experiment configuration: one JSON document covering the encoder, the
//! regression head, sampling, the synthetic corpus, training, and seeds.
//! Unknown fields are rejected, and cross-field constraints are checked
//! with messages that name the offending field.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{SamplingConfig, SynthConfig};
use crate::encoder::EncoderConfig;
use crate::fusion::HeadConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error in {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Rmse,
    OneMinusCcc,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub loss_kind: LossKind,
    /// Weight of the relational term.
    pub lambda: f64,
    /// Batch size.
    pub b: usize,
    pub epochs: usize,
    /// Batches per epoch.
    pub batches_per_epoch: usize,
    /// Initial learning rate; decays by 10x every 5 epochs.
    pub lr: f64,
    pub weight_decay: f64,
    /// Fraction of available clips used per epoch (subsampling regime);
    /// applied by scaling batches_per_epoch at run time, kept here so a
    /// run record captures it.
    pub subsample_fraction: f64,
    /// Spatial augmentation during training.
    pub augment: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub corpus: u64,
    pub init: u64,
    pub train: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
    pub sampling: SamplingConfig,
    pub synth: SynthConfig,
    pub training: TrainingConfig,
    pub seeds: Seeds,
}

impl ExperimentConfig {
    /// A small configuration that exercises every code path quickly.
    pub fn small() -> ExperimentConfig {
        ExperimentConfig {
            encoder: EncoderConfig {
                t: 4,
                h: 8,
                w: 8,
                d_f: 16,
                d: 16,
                transformer_layers: 1,
                attention_heads: 2,
                feedforward_width: 32,
                backbone_seed: 7,
            },
            head: HeadConfig {
                c: 2,
                penultimate_width: 16,
                dropout_rate: 0.1,
                total_score_enabled: false,
                supervised_mask: vec![true, true],
            },
            sampling: SamplingConfig { t: 4, k: 1 },
            synth: SynthConfig {
                subjects: 4,
                videos_per_subject: 2,
                l: 24,
                h: 8,
                w: 8,
                c: 2,
                segment_frames: 4,
                context_dependence: 0.5,
                noise: 0.05,
                fps: 3.0,
            },
            training: TrainingConfig {
                loss_kind: LossKind::Rmse,
                lambda: 2.0,
                b: 4,
                epochs: 2,
                batches_per_epoch: 2,
                lr: 1e-4,
                weight_decay: 5e-3,
                subsample_fraction: 1.0,
                augment: false,
            },
            seeds: Seeds {
                corpus: 1,
                init: 2,
                train: 3,
            },
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError::Invalid(m));
        self.encoder.validate().map_err(ConfigError::Invalid)?;
        self.head.validate().map_err(ConfigError::Invalid)?;
        self.sampling.validate().map_err(ConfigError::Invalid)?;
        self.synth.validate().map_err(ConfigError::Invalid)?;
        if self.sampling.t != self.encoder.t {
            return err(format!(
                "sampling.t ({}) must equal encoder.t ({})",
                self.sampling.t, self.encoder.t
            ));
        }
        if (self.synth.h, self.synth.w) != (self.encoder.h, self.encoder.w) {
            return err(format!(
                "synth.h/w ({}, {}) must equal encoder.h/w ({}, {})",
                self.synth.h, self.synth.w, self.encoder.h, self.encoder.w
            ));
        }
        if self.synth.c != self.head.c {
            return err(format!(
                "synth.c ({}) must equal head.c ({})",
                self.synth.c, self.head.c
            ));
        }
        if self.synth.l < self.sampling.t {
            log::info!(
                "synth.l ({}) < sampling.t ({}): clips will loop",
                self.synth.l,
                self.sampling.t
            );
        }
        let t = &self.training;
        if t.lambda < 0.0 {
            return err(format!("training.lambda ({}) must be >= 0", t.lambda));
        }
        if t.b < 2 {
            return err(format!(
                "training.b ({}) must be at least 2 for the relational term",
                t.b
            ));
        }
        if t.epochs == 0 || t.batches_per_epoch == 0 {
            return err("training.epochs and training.batches_per_epoch must be at least 1"
                .to_string());
        }
        if !(t.lr > 0.0) {
            return err(format!("training.lr ({}) must be positive", t.lr));
        }
        if t.weight_decay < 0.0 {
            return err(format!(
                "training.weight_decay ({}) must be >= 0",
                t.weight_decay
            ));
        }
        if !(0.0..=1.0).contains(&t.subsample_fraction) || t.subsample_fraction == 0.0 {
            return err(format!(
                "training.subsample_fraction ({}) must be in (0,1]",
                t.subsample_fraction
            ));
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<ExperimentConfig, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
                path: path.display().to_string(),
                source: e,
            })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply one `key=value` override using dotted paths, e.g.
    /// `seeds.train=9` or `training.lambda=0`.
    pub fn apply_override(&mut self, entry: &str) -> Result<(), ConfigError> {
        let (key, value) = entry.split_once('=').ok_or_else(|| {
            ConfigError::Invalid(format!("override '{entry}' must look like key=value"))
        })?;
        let mut doc = serde_json::to_value(&*self).map_err(|e| {
            ConfigError::Invalid(format!("internal serialization failure: {e}"))
        })?;
        let mut node = &mut doc;
        for part in key.split('.') {
            node = node.get_mut(part).ok_or_else(|| {
                ConfigError::Invalid(format!("override key '{key}' has no field '{part}'"))
            })?;
        }
        *node = serde_json::from_str(value)
            .or_else(|_| serde_json::from_str(&format!("\"{value}\"")))
            .map_err(|e| ConfigError::Invalid(format!("override value '{value}': {e}")))?;
        *self = serde_json::from_value(doc).map_err(|e| {
            ConfigError::Invalid(format!("override '{entry}' produced an invalid config: {e}"))
        })?;
        Ok(())
    }
}

/// The step-decay schedule: lr(epoch) = lr0 * 0.1^(epoch / 5).
pub fn lr_schedule(lr0: f64, epoch: usize) -> f64 {
    lr0 * 0.1f64.powi((epoch / 5) as i32)
}
