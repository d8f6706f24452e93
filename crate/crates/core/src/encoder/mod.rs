//! Reference text encoder: token embedding, mean pooling over non-PAD
//! tokens, tanh, then a linear projection head.
//!
//! ```text
//! m = mean_t E[id_t]      (embed_dim)
//! a = tanh(m)
//! h = a W + b             (proj_dim)
//! ```
//!
//! The fact head produces case representations and the decision head
//! produces verbalized-decision representations. With `share_heads` both
//! heads are one `Linear` stored once.
//!
//! Parameters live in `f64` for arithmetic but are always rounded to values
//! representable in `f32`, the checkpoint storage type, after init and after
//! every optimizer update. A saved model therefore loads back bitwise.

mod checkpoint;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{TokenSequence, PAD_ID};
use crate::error::{Error, Result};

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, NamedTensor,
    FORMAT_VERSION, MAGIC,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub proj_dim: usize,
    pub seed: u64,
    pub share_heads: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 3,
            embed_dim: 64,
            proj_dim: 256,
            seed: 0,
            share_heads: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.embed_dim == 0 || self.proj_dim == 0 {
            return Err(Error::invalid("encoder dimensions must all be at least 1"));
        }
        Ok(())
    }
}

/// Which projection head to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Fact,
    Decision,
}

/// Rounds to the nearest `f32`.
#[inline]
pub(crate) fn quantize(x: f64) -> f64 {
    x as f32 as f64
}

/// Glorot-uniform bound.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Dense affine map `y = x W + b`, `W` stored row-major `[in_dim × out_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn glorot(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = glorot_bound(in_dim, out_dim);
        let weight = (0..in_dim * out_dim)
            .map(|_| quantize(rng.gen_range(-bound..bound)))
            .collect();
        Self {
            in_dim,
            out_dim,
            weight,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        let mut y = self.bias.clone();
        for (xj, row) in x.iter().zip(self.weight.chunks_exact(self.out_dim)) {
            if *xj == 0.0 {
                continue;
            }
            for (yi, w) in y.iter_mut().zip(row) {
                *yi += xj * w;
            }
        }
        y
    }

    /// Accumulates `dW += x ⊗ g`, `db += g` into `grad` and returns `W g`.
    pub fn backward(&self, x: &[f64], g: &[f64], grad: &mut Linear) -> Vec<f64> {
        debug_assert_eq!(g.len(), self.out_dim);
        for (gb, gi) in grad.bias.iter_mut().zip(g) {
            *gb += gi;
        }
        let mut dx = vec![0.0; self.in_dim];
        for ((xj, row), (grow, dxj)) in x.iter().zip(self.weight.chunks_exact(self.out_dim)).zip(
            grad.weight
                .chunks_exact_mut(self.out_dim)
                .zip(dx.iter_mut()),
        ) {
            let mut acc = 0.0;
            for ((w, gw), gi) in row.iter().zip(grow.iter_mut()).zip(g) {
                *gw += xj * gi;
                acc += w * gi;
            }
            *dxj = acc;
        }
        dx
    }

    fn zeroed_like(&self) -> Self {
        Self::zeros(self.in_dim, self.out_dim)
    }
}

/// Fixed-dimension representation of a fact or a decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl From<Vec<f64>> for Embedding {
    fn from(v: Vec<f64>) -> Self {
        Embedding(v)
    }
}

/// Flat view over parameter blocks in a fixed order; gradients expose the
/// same order so an optimizer can zip the two.
pub trait ParamBlocks {
    fn blocks(&self) -> Vec<&[f64]>;
    fn blocks_mut(&mut self) -> Vec<&mut [f64]>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    config: EncoderConfig,
    /// `[vocab_size × embed_dim]`, row-major.
    pub embedding: Vec<f64>,
    pub fact: Linear,
    /// `None` when the decision head shares the fact head's storage.
    pub decision: Option<Linear>,
}

/// Gradient accumulators with the model's exact shapes.
pub type EncoderGradients = EncoderModel;

impl EncoderModel {
    /// Seeded Glorot-uniform init for the embedding table and projection
    /// weights; biases start at zero.
    pub fn init(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = crate::rng::seeded(config.seed, 0xe5c0_0001);
        let bound = glorot_bound(config.vocab_size, config.embed_dim);
        let embedding = (0..config.vocab_size * config.embed_dim)
            .map(|_| quantize(rng.gen_range(-bound..bound)))
            .collect();
        let fact = Linear::glorot(config.embed_dim, config.proj_dim, &mut rng);
        let decision = (!config.share_heads)
            .then(|| Linear::glorot(config.embed_dim, config.proj_dim, &mut rng));
        Ok(Self {
            config,
            embedding,
            fact,
            decision,
        })
    }

    pub(crate) fn from_parts(
        config: EncoderConfig,
        embedding: Vec<f64>,
        fact: Linear,
        decision: Option<Linear>,
    ) -> Result<Self> {
        config.validate()?;
        let bad = embedding.len() != config.vocab_size * config.embed_dim
            || fact.in_dim != config.embed_dim
            || fact.out_dim != config.proj_dim
            || decision.is_some() == config.share_heads
            || decision
                .as_ref()
                .is_some_and(|d| d.in_dim != config.embed_dim || d.out_dim != config.proj_dim);
        if bad {
            return Err(Error::Shape {
                expected: format!("{config:?}"),
                actual: "parameter blocks of other shapes".into(),
            });
        }
        Ok(Self {
            config,
            embedding,
            fact,
            decision,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn proj_dim(&self) -> usize {
        self.config.proj_dim
    }

    /// Zero accumulators shaped like `self`.
    pub fn zero_grads(&self) -> EncoderGradients {
        Self {
            config: self.config,
            embedding: vec![0.0; self.embedding.len()],
            fact: self.fact.zeroed_like(),
            decision: self.decision.as_ref().map(Linear::zeroed_like),
        }
    }

    pub fn head(&self, head: Head) -> &Linear {
        match (head, &self.decision) {
            (Head::Decision, Some(d)) => d,
            _ => &self.fact,
        }
    }

    fn head_mut(&mut self, head: Head) -> &mut Linear {
        match (head, &mut self.decision) {
            (Head::Decision, Some(d)) => d,
            _ => &mut self.fact,
        }
    }

    fn row(&self, id: u32) -> &[f64] {
        let d = self.config.embed_dim;
        &self.embedding[id as usize * d..(id as usize + 1) * d]
    }

    /// Mean of non-PAD token embeddings, then tanh.
    fn pooled(&self, seq: &TokenSequence) -> Result<(Vec<f64>, usize)> {
        let mut mean = vec![0.0; self.config.embed_dim];
        let mut n = 0usize;
        for &id in seq.ids() {
            if id == PAD_ID {
                continue;
            }
            if id as usize >= self.config.vocab_size {
                return Err(Error::TokenOutOfRange {
                    id,
                    vocab_size: self.config.vocab_size,
                });
            }
            for (m, e) in mean.iter_mut().zip(self.row(id)) {
                *m += e;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptySequence);
        }
        let inv = 1.0 / n as f64;
        for m in &mut mean {
            *m = (*m * inv).tanh();
        }
        Ok((mean, n))
    }

    pub fn encode(&self, seq: &TokenSequence, head: Head) -> Result<Embedding> {
        let (a, _) = self.pooled(seq)?;
        Ok(Embedding(self.head(head).forward(&a)))
    }

    /// Accumulates the gradient of a scalar loss into `grads`, given
    /// `upstream = ∂loss/∂h` for the embedding `encode(seq, head)` produced.
    pub fn encode_backward(
        &self,
        seq: &TokenSequence,
        head: Head,
        upstream: &[f64],
        grads: &mut EncoderGradients,
    ) -> Result<()> {
        if upstream.len() != self.config.proj_dim {
            return Err(Error::Shape {
                expected: format!("upstream of {} entries", self.config.proj_dim),
                actual: format!("{} entries", upstream.len()),
            });
        }
        if grads.config != self.config {
            return Err(Error::Shape {
                expected: format!("{:?}", self.config),
                actual: format!("{:?}", grads.config),
            });
        }
        if upstream.iter().all(|&g| g == 0.0) {
            return Ok(());
        }
        let (a, n) = self.pooled(seq)?;
        let da = self.head(head).backward(&a, upstream, grads.head_mut(head));
        let inv = 1.0 / n as f64;
        let dm: Vec<f64> = da
            .iter()
            .zip(&a)
            .map(|(g, ai)| g * (1.0 - ai * ai) * inv)
            .collect();
        let d = self.config.embed_dim;
        for &id in seq.ids() {
            if id == PAD_ID {
                continue;
            }
            let row = &mut grads.embedding[id as usize * d..(id as usize + 1) * d];
            for (r, g) in row.iter_mut().zip(&dm) {
                *r += g;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|b| b.iter().all(|x| x.is_finite()))
    }
}

impl ParamBlocks for EncoderModel {
    fn blocks(&self) -> Vec<&[f64]> {
        let mut out = vec![
            self.embedding.as_slice(),
            self.fact.weight.as_slice(),
            self.fact.bias.as_slice(),
        ];
        if let Some(d) = &self.decision {
            out.push(&d.weight);
            out.push(&d.bias);
        }
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![
            self.embedding.as_mut_slice(),
            self.fact.weight.as_mut_slice(),
            self.fact.bias.as_mut_slice(),
        ];
        if let Some(d) = &mut self.decision {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        out
    }
}

/// Initializes an encoder; see [`EncoderModel::init`].
pub fn init_params(config: EncoderConfig) -> Result<EncoderModel> {
    EncoderModel::init(config)
}
