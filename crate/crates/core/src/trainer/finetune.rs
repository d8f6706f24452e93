use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::classifier::{Classifier, EncodedCase, Task};
use super::optim::{AdamW, AdamWConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub tasks: Vec<Task>,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    /// Ablation: train only the heads.
    pub freeze_encoder: bool,
    /// Set from the run's top-level seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 5e-6,
            batch_size: 64,
            tasks: Task::ALL.to_vec(),
            weight_decay: 0.01,
            grad_clip_norm: 1.0,
            freeze_encoder: false,
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::invalid("finetune needs at least one task"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("finetune batch_size must be at least 1"));
        }
        if self.learning_rate.is_nan()
            || self.learning_rate < 0.0
            || self.grad_clip_norm.is_nan()
            || self.grad_clip_norm <= 0.0
            || self.weight_decay.is_nan()
            || self.weight_decay < 0.0
        {
            return Err(Error::invalid("finetune rates must be non-negative"));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            grad_clip_norm: Some(self.grad_clip_norm),
            ..AdamWConfig::default()
        }
    }
}

/// Mean training loss per epoch, measured before each batch's update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FinetuneReport {
    pub epoch_losses: Vec<f64>,
}

/// Trains heads and (unless frozen) the encoder with summed per-task
/// cross-entropy. Batches are reshuffled every epoch from the seed.
pub fn finetune(
    classifier: &mut Classifier,
    cases: &[EncodedCase],
    config: &FinetuneConfig,
) -> Result<FinetuneReport> {
    config.validate()?;
    if cases.is_empty() {
        return Err(Error::invalid("finetune needs at least one training case"));
    }
    let n_heads = classifier.heads.len();
    if let Some(bad) = cases.iter().find(|c| c.targets.len() != n_heads) {
        return Err(Error::invalid(format!(
            "case carries {} targets for {n_heads} heads",
            bad.targets.len()
        )));
    }
    for (h, head) in classifier.heads.iter().enumerate() {
        if cases.iter().any(|c| c.targets[h] >= head.labels.len()) {
            return Err(Error::invalid(format!("{} target out of range", head.task)));
        }
    }

    let train_encoder = !config.freeze_encoder;
    let mut opt = AdamW::new(config.optimizer());
    let mut report = FinetuneReport::default();
    let mut order: Vec<usize> = (0..cases.len()).collect();
    for epoch in 0..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut crate::rng::seeded(
            config.seed,
            0xf1e0_0000 + epoch as u64,
        ));
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<EncodedCase> = chunk.iter().map(|&i| cases[i].clone()).collect();
            let (loss, grads) = classifier.batch_loss_and_grads(&batch, config.freeze_encoder)?;
            if !loss.is_finite() {
                return Err(Error::invalid(format!(
                    "non-finite finetune loss at epoch {epoch}"
                )));
            }
            total += loss * chunk.len() as f64;
            opt.step(
                classifier.trainable_blocks_mut(train_encoder),
                grads.blocks(train_encoder),
            );
        }
        report.epoch_losses.push(total / cases.len() as f64);
    }
    Ok(report)
}
