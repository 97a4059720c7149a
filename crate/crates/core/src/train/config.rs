use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_stream, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Saliency,
    Gaze,
    Classify,
}

/// Optimizer and schedule settings shared by both training loops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub task: Task,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs at which the learning rate is multiplied by `decay_factor`.
    #[serde(default)]
    pub decay_epochs: Vec<usize>,
    #[serde(default = "default_decay_factor")]
    pub decay_factor: f64,
    pub seed: u64,
    /// Indices drawn per epoch. Fine-tuning defaults to the labeled count;
    /// attention training defaults to one full pass over the training set.
    #[serde(default)]
    pub samples_per_epoch: Option<usize>,
    /// Fine-tuning only: train the classification head and leave the trunk
    /// (parameters and normalization statistics) untouched.
    #[serde(default)]
    pub freeze_trunk: bool,
    /// Worker threads for the per-sample forward/backward passes. Gradients
    /// are reduced in sample order, so the result is thread-count invariant.
    #[serde(default = "default_threads")]
    pub threads: usize,
}

fn default_decay_factor() -> f64 {
    0.1
}

fn default_threads() -> usize {
    1
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // lr 0 is allowed: it must leave parameters bit-identical, which is
        // a useful plumbing check even though no real run wants it.
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::invalid(format!("learning rate must be ≥ 0, got {}", self.lr)));
        }
        if !self.momentum.is_finite() || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::invalid(format!("weight decay must be ≥ 0, got {}", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epoch count must be at least 1"));
        }
        if !self.decay_factor.is_finite() || self.decay_factor <= 0.0 || self.decay_factor > 1.0 {
            return Err(Error::invalid(format!(
                "decay factor must be in (0, 1], got {}",
                self.decay_factor
            )));
        }
        if self.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("decay epochs must be strictly increasing"));
        }
        if self.decay_epochs.last().is_some_and(|&d| d >= self.epochs) {
            return Err(Error::invalid(format!(
                "decay epochs must lie before the last epoch ({})",
                self.epochs
            )));
        }
        if self.samples_per_epoch == Some(0) {
            return Err(Error::invalid("samples per epoch must be at least 1"));
        }
        if self.threads == 0 {
            return Err(Error::invalid("thread count must be at least 1"));
        }
        Ok(())
    }

    /// Learning rate in effect at `epoch`: the base rate times the decay
    /// factor once per decay epoch already passed. Piecewise constant and
    /// non-increasing.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.decay_epochs.iter().filter(|&&d| d <= epoch).count();
        self.lr * self.decay_factor.powi(passed as i32)
    }

    /// The stream fine-tuning hands to the balanced sampler; exposed so the
    /// drawn index distribution can be audited without running the loop.
    pub fn sampler_stream(&self) -> RngStream {
        RngStream::new(self.seed, derive_stream(self.seed, &[TAG_SAMPLER]))
    }

    pub fn preset(name: &str, seed: u64) -> Result<TrainConfig> {
        Ok(match name {
            "paper-saliency" => TrainConfig::paper_saliency(seed),
            "paper-gaze" => TrainConfig::paper_gaze(seed),
            "paper-finetune" => TrainConfig::paper_finetune(seed),
            "mini-saliency" => TrainConfig::mini_saliency(seed),
            "mini-gaze" => TrainConfig::mini_gaze(seed),
            "mini-finetune" => TrainConfig::mini_finetune(seed),
            other => {
                return Err(Error::invalid(format!(
                    "unknown preset {:?}; expected one of paper-saliency, paper-gaze, \
                     paper-finetune, mini-saliency, mini-gaze, mini-finetune",
                    other
                )))
            }
        })
    }

    /// Saliency pre-training: 8 epochs of SGD at 0.1 with the rate cut
    /// tenfold for the final two.
    pub fn paper_saliency(seed: u64) -> TrainConfig {
        TrainConfig {
            task: Task::Saliency,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 32,
            epochs: 8,
            decay_epochs: vec![6],
            decay_factor: 0.1,
            seed,
            samples_per_epoch: None,
            freeze_trunk: false,
            threads: 1,
        }
    }

    /// Gaze-point pre-training: 10 epochs at 0.01, decayed for the final two.
    pub fn paper_gaze(seed: u64) -> TrainConfig {
        TrainConfig {
            task: Task::Gaze,
            lr: 0.01,
            epochs: 10,
            decay_epochs: vec![8],
            ..TrainConfig::paper_saliency(seed)
        }
    }

    /// Classification fine-tuning: 50 epochs at 0.01 decayed at 20 and 35,
    /// 1024 balanced draws per epoch, mini-batches of 16.
    pub fn paper_finetune(seed: u64) -> TrainConfig {
        TrainConfig {
            task: Task::Classify,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 16,
            epochs: 50,
            decay_epochs: vec![20, 35],
            decay_factor: 0.1,
            seed,
            samples_per_epoch: Some(1024),
            freeze_trunk: false,
            threads: 1,
        }
    }

    /// Saliency schedule compressed to 12 epochs (decay point kept at 3/4).
    pub fn mini_saliency(seed: u64) -> TrainConfig {
        TrainConfig { epochs: 12, decay_epochs: vec![9], ..TrainConfig::paper_saliency(seed) }
    }

    /// The gaze schedule is already desk-sized at 10 epochs, so the mini
    /// variant keeps it unchanged; the name exists for uniform resolution.
    pub fn mini_gaze(seed: u64) -> TrainConfig {
        TrainConfig::paper_gaze(seed)
    }

    /// Fine-tuning compressed to 20 epochs (decay points kept at 2/5 and
    /// 7/10) with 256 draws per epoch.
    pub fn mini_finetune(seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: 20,
            decay_epochs: vec![8, 14],
            samples_per_epoch: Some(256),
            ..TrainConfig::paper_finetune(seed)
        }
    }
}

pub(crate) const TAG_ORDER: u64 = 0x6f72;
pub(crate) const TAG_SAMPLE: u64 = 0x7361;
pub(crate) const TAG_SAMPLER: u64 = 0x6264;
