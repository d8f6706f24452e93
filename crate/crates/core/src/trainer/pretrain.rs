//! Dual-view contrastive pretraining loop.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::batch::{
    assemble_lcc_batch, assemble_ldm_batch, AssembledBatch, BatchPools, PretrainCorpus, SlotText,
};
use super::optim::{AdamW, AdamWConfig};
use crate::encoder::{
    save_checkpoint, Embedding, EncoderGradients, EncoderModel, Head, ParamBlocks,
};
use crate::error::{Error, Result};
use crate::objective::{info_nce_backward, DEFAULT_TEMPERATURE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub temperature: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Set from the run's top-level seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            learning_rate: 1e-5,
            batch_size: 32,
            temperature: DEFAULT_TEMPERATURE,
            weight_decay: 0.01,
            grad_clip_norm: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid(format!(
                "pretrain batch_size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(Error::invalid("temperature must be positive"));
        }
        if self.learning_rate.is_nan()
            || self.learning_rate < 0.0
            || self.weight_decay.is_nan()
            || self.weight_decay < 0.0
            || self.grad_clip_norm.is_nan()
            || self.grad_clip_norm <= 0.0
        {
            return Err(Error::invalid("pretrain rates must be non-negative"));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            grad_clip_norm: Some(self.grad_clip_norm),
        }
    }
}

/// Which view(s) contribute to the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Views {
    Lcc,
    Ldm,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    /// Batch means.
    pub lcc: f64,
    pub ldm: f64,
}

impl StepLosses {
    pub fn total(&self) -> f64 {
        self.lcc + self.ldm
    }
}

fn slot_sequence(
    corpus: &PretrainCorpus,
    slot: SlotText,
) -> Result<(&crate::corpus::TokenSequence, Head)> {
    match slot {
        SlotText::Fact(c) => Ok((&corpus.facts[c], Head::Fact)),
        SlotText::Decision(p) => corpus
            .decision(p)
            .map(|s| (s, Head::Decision))
            .ok_or_else(|| Error::invalid(format!("no verbalized decision for {p:?}"))),
    }
}

/// Per-view mean losses over the batch and the gradient of
/// `views`' loss (`mean_i(L_lcc + L_ldm)` for [`Views::Both`]).
pub fn pretrain_loss_and_grads(
    model: &EncoderModel,
    corpus: &PretrainCorpus,
    batch: &BatchPools,
    temperature: f64,
    views: Views,
) -> Result<(StepLosses, EncoderGradients)> {
    let lcc = assemble_lcc_batch(batch)?;
    let ldm = assemble_ldm_batch(batch)?;
    let slots: Vec<_> = batch
        .slots()
        .into_iter()
        .map(|s| slot_sequence(corpus, s))
        .collect::<Result<_>>()?;
    let embeddings: Vec<Embedding> = slots
        .par_iter()
        .map(|(seq, head)| model.encode(seq, *head))
        .collect::<Result<_>>()?;

    let b = batch.len() as f64;
    let dim = model.proj_dim();
    let mut upstream = vec![vec![0.0; dim]; embeddings.len()];
    let mut run = |assembled: &AssembledBatch, active: bool| -> Result<f64> {
        let mut total = 0.0;
        for (slot, inst) in assembled
            .instances
            .iter()
            .zip(assembled.bind(&embeddings, temperature))
        {
            let g = info_nce_backward(&inst)?;
            total += g.loss.value;
            if !active {
                continue;
            }
            let mut add = |s: usize, v: &[f64]| {
                for (u, x) in upstream[s].iter_mut().zip(v) {
                    *u += x / b;
                }
            };
            add(slot.anchor, &g.anchor);
            add(slot.positive, &g.positive);
            for (&n, gn) in slot.negatives.iter().zip(&g.negatives) {
                add(n, gn);
            }
        }
        Ok(total / b)
    };
    let losses = StepLosses {
        lcc: run(&lcc, views != Views::Ldm)?,
        ldm: run(&ldm, views != Views::Lcc)?,
    };

    let mut grads = model.zero_grads();
    for ((seq, head), up) in slots.iter().zip(&upstream) {
        model.encode_backward(seq, *head, up, &mut grads)?;
    }
    Ok((losses, grads))
}

/// One optimizer step on one batch. Returns the batch's losses measured
/// before the update.
pub fn pretrain_step(
    model: &mut EncoderModel,
    opt: &mut AdamW,
    corpus: &PretrainCorpus,
    batch: &BatchPools,
    config: &PretrainConfig,
) -> Result<StepLosses> {
    let (losses, grads) =
        pretrain_loss_and_grads(model, corpus, batch, config.temperature, Views::Both)?;
    if !losses.lcc.is_finite() || !losses.ldm.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: 0,
            step: opt.steps_taken() as usize,
            lcc: losses.lcc,
            ldm: losses.ldm,
        });
    }
    opt.step(model.blocks_mut(), grads.blocks());
    Ok(losses)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub epoch: usize,
    pub step: usize,
    pub loss_lcc: f64,
    pub loss_ldm: f64,
    pub loss_total: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PretrainReport {
    pub rows: Vec<LossRow>,
    pub checkpoints: Vec<PathBuf>,
}

impl PretrainReport {
    /// Mean total loss of each epoch (1-based epochs map to index `e − 1`).
    pub fn epoch_means(&self) -> Vec<f64> {
        let epochs = self.rows.iter().map(|r| r.epoch).max().unwrap_or(0);
        (1..=epochs)
            .map(|e| {
                let rows: Vec<_> = self.rows.iter().filter(|r| r.epoch == e).collect();
                rows.iter().map(|r| r.loss_total).sum::<f64>() / rows.len().max(1) as f64
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::fsio::write_atomic(path, |w: &mut dyn Write| {
            let mut csv = csv::Writer::from_writer(w);
            csv.write_record(["epoch", "step", "loss_lcc", "loss_ldm", "loss_total"])
                .map_err(std::io::Error::other)?;
            for r in &self.rows {
                csv.write_record([
                    r.epoch.to_string(),
                    r.step.to_string(),
                    r.loss_lcc.to_string(),
                    r.loss_ldm.to_string(),
                    r.loss_total.to_string(),
                ])
                .map_err(std::io::Error::other)?;
            }
            csv.flush()
        })
    }
}

/// Runs `config.epochs` epochs over the corpus anchors. Anchors are
/// reshuffled every epoch; a trailing batch with fewer than two anchors is
/// dropped. With `run_dir`, writes `epoch-{n}.duet` after each epoch and
/// `loss.csv` at the end.
pub fn pretrain(
    model: &mut EncoderModel,
    corpus: &PretrainCorpus,
    config: &PretrainConfig,
    run_dir: Option<&Path>,
) -> Result<PretrainReport> {
    config.validate()?;
    if corpus.anchors.len() < 2 {
        return Err(Error::invalid(format!(
            "pretraining needs at least 2 anchors with both pools, got {}",
            corpus.anchors.len()
        )));
    }
    if let Some(dir) = run_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut opt = AdamW::new(config.optimizer());
    let mut report = PretrainReport::default();
    let mut order: Vec<usize> = (0..corpus.anchors.len()).collect();
    let mut step = 0;
    for epoch in 1..=config.epochs {
        let mut rng = crate::rng::seeded(config.seed, 0x9e70_0000 + epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size).filter(|c| c.len() >= 2) {
            let batch = corpus.sample_batch(chunk, &mut rng);
            let losses =
                pretrain_step(model, &mut opt, corpus, &batch, config).map_err(|e| match e {
                    Error::NonFiniteLoss { lcc, ldm, .. } => Error::NonFiniteLoss {
                        epoch,
                        step,
                        lcc,
                        ldm,
                    },
                    other => other,
                })?;
            step += 1;
            log::debug!(
                "epoch {epoch} step {step}: lcc {:.4} ldm {:.4}",
                losses.lcc,
                losses.ldm
            );
            report.rows.push(LossRow {
                epoch,
                step,
                loss_lcc: losses.lcc,
                loss_ldm: losses.ldm,
                loss_total: losses.total(),
            });
        }
        if let Some(dir) = run_dir {
            let path = dir.join(format!("epoch-{epoch}.duet"));
            save_checkpoint(model, &path)?;
            report.checkpoints.push(path);
        }
        if let Some(mean) = report.epoch_means().last() {
            log::info!("pretrain epoch {epoch}: mean loss {mean:.4}");
        }
    }
    if let Some(dir) = run_dir {
        report.write_csv(&dir.join("loss.csv"))?;
    }
    Ok(report)
}
