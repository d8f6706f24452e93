//! Temperature-scaled contrastive loss over cosine similarities.
//!
//! For an anchor `h`, positive `h⁺` and negatives `h⁻_1..h⁻_K`:
//!
//! ```text
//! s_0 = cos(h, h⁺) / τ,   s_k = cos(h, h⁻_k) / τ
//! L   = -ln( exp(s_0) / Σ_k exp(s_k) )
//! ```
//!
//! The same loss drives both case clustering (negatives are facts) and
//! decision matching (negatives are verbalized decisions); the pretraining
//! objective is their unweighted sum.

use crate::encoder::Embedding;
use crate::error::{Error, Result};

pub const DEFAULT_TEMPERATURE: f64 = 0.05;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity, clamped to `[-1, 1]`. Zero vectors are an error.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            expected: format!("{} entries", a.len()),
            actual: format!("{} entries", b.len()),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// One anchor with its positive and negatives.
#[derive(Debug, Clone)]
pub struct ContrastiveInstance<'a> {
    pub anchor: &'a Embedding,
    pub positive: &'a Embedding,
    pub negatives: Vec<&'a Embedding>,
    pub temperature: f64,
}

impl<'a> ContrastiveInstance<'a> {
    pub fn new(
        anchor: &'a Embedding,
        positive: &'a Embedding,
        negatives: Vec<&'a Embedding>,
        temperature: f64,
    ) -> Self {
        Self {
            anchor,
            positive,
            negatives,
            temperature,
        }
    }

    /// Positive first, then negatives in order.
    fn candidates(&self) -> impl Iterator<Item = &'a Embedding> + '_ {
        std::iter::once(self.positive).chain(self.negatives.iter().copied())
    }

    fn validate(&self) -> Result<()> {
        if self.negatives.is_empty() {
            return Err(Error::invalid(
                "contrastive instance needs at least one negative",
            ));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        let dim = self.anchor.dim();
        if let Some(bad) = self.candidates().find(|e| e.dim() != dim) {
            return Err(Error::Shape {
                expected: format!("{dim} entries"),
                actual: format!("{} entries", bad.dim()),
            });
        }
        Ok(())
    }

    pub fn similarities(&self) -> Result<Vec<f64>> {
        self.validate()?;
        self.candidates()
            .map(|c| cosine_sim(self.anchor.as_slice(), c.as_slice()))
            .collect()
    }
}

/// Loss and the softmax over `[positive, negatives...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub probs: Vec<f64>,
}

/// Returns `(loss, probs)` for logits whose target is index 0, via
/// log-sum-exp with the maximum factored out.
pub(crate) fn softmax_xent(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let (argmax, &max) = logits
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .expect("non-empty logits");
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != argmax)
        .map(|(_, &s)| (s - max).exp())
        .sum();
    let lse = max + rest.ln_1p();
    let probs = logits.iter().map(|&s| (s - lse).exp()).collect();
    let value = if argmax == target {
        rest.ln_1p()
    } else {
        (lse - logits[target]).max(0.0)
    };
    (value, probs)
}

pub fn info_nce(instance: &ContrastiveInstance<'_>) -> Result<LossValue> {
    let tau = instance.temperature;
    let logits: Vec<f64> = instance.similarities()?.iter().map(|c| c / tau).collect();
    let (value, probs) = softmax_xent(&logits, 0);
    Ok(LossValue { value, probs })
}

/// Gradients of one instance's loss.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceGradients {
    pub loss: LossValue,
    /// `∂L/∂sim_k` for `[positive, negatives...]`.
    pub sim_grads: Vec<f64>,
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

pub fn info_nce_backward(instance: &ContrastiveInstance<'_>) -> Result<InstanceGradients> {
    let sims = instance.similarities()?;
    let tau = instance.temperature;
    let logits: Vec<f64> = sims.iter().map(|c| c / tau).collect();
    let (value, probs) = softmax_xent(&logits, 0);

    let sim_grads: Vec<f64> = probs
        .iter()
        .enumerate()
        .map(|(k, p)| (p - if k == 0 { 1.0 } else { 0.0 }) / tau)
        .collect();

    let a = instance.anchor.as_slice();
    let na = norm(a);
    let a_hat: Vec<f64> = a.iter().map(|x| x / na).collect();
    let mut anchor = vec![0.0; a.len()];
    let mut cand_grads = Vec::with_capacity(sims.len());
    for ((cand, &c), &g) in instance.candidates().zip(&sims).zip(&sim_grads) {
        let v = cand.as_slice();
        let nv = norm(v);
        let mut gv = vec![0.0; v.len()];
        for i in 0..v.len() {
            let v_hat = v[i] / nv;
            // ∂cos/∂a = (v̂ − c·â)/‖a‖ and symmetrically for v.
            anchor[i] += g * (v_hat - c * a_hat[i]) / na;
            gv[i] = g * (a_hat[i] - c * v_hat) / nv;
        }
        cand_grads.push(gv);
    }
    let mut cand_grads = cand_grads.into_iter();
    let positive = cand_grads.next().expect("positive gradient");
    Ok(InstanceGradients {
        loss: LossValue { value, probs },
        sim_grads,
        anchor,
        positive,
        negatives: cand_grads.collect(),
    })
}

/// Unweighted sum of the two views' losses.
pub fn combined_loss(lcc: &LossValue, ldm: &LossValue) -> f64 {
    lcc.value + ldm.value
}

/// Batch reduction: mean over instances of per-instance combined losses.
pub fn batch_loss(lcc: &[LossValue], ldm: &[LossValue]) -> Result<f64> {
    if lcc.len() != ldm.len() || lcc.is_empty() {
        return Err(Error::invalid(format!(
            "batch loss needs equal non-empty views, got {} and {}",
            lcc.len(),
            ldm.len()
        )));
    }
    let total: f64 = lcc.iter().zip(ldm).map(|(a, b)| combined_loss(a, b)).sum();
    Ok(total / lcc.len() as f64)
}
