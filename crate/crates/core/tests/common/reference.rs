//! Double-double reimplementation of the encoder, contrastive loss and
//! classifier cross-entropy. Finite differences over these functions have
//! a round-off floor near 1e-30, far below any gradient being checked.

use super::dd::Dd as DD;
use duet::corpus::PAD_ID;
use duet::trainer::AssembledBatch;

/// Parameter blocks in the library's order: embedding, fact weight, fact
/// bias, then optionally decision weight and bias, then any head blocks.
pub struct Shape {
    pub embed_dim: usize,
    pub proj_dim: usize,
    pub share_heads: bool,
}

impl Shape {
    fn encoder_blocks(&self) -> usize {
        if self.share_heads {
            3
        } else {
            5
        }
    }
}

fn affine(x: &[DD], w: &[DD], b: &[DD]) -> Vec<DD> {
    let out = b.len();
    (0..out)
        .map(|o| {
            x.iter()
                .enumerate()
                .fold(b[o], |acc, (i, &xi)| acc + xi * w[i * out + o])
        })
        .collect()
}

pub fn encode(p: &[Vec<DD>], shape: &Shape, ids: &[u32], decision_head: bool) -> Vec<DD> {
    let d = shape.embed_dim;
    let mut sum = vec![DD::new(0.0); d];
    let mut n = 0.0;
    for &id in ids.iter().filter(|&&id| id != PAD_ID) {
        for (k, s) in sum.iter_mut().enumerate() {
            *s += p[0][id as usize * d + k];
        }
        n += 1.0;
    }
    let a: Vec<DD> = sum.into_iter().map(|s| (s / n).tanh()).collect();
    let (w, b) = if decision_head && !shape.share_heads {
        (3, 4)
    } else {
        (1, 2)
    };
    affine(&a, &p[w], &p[b])
}

fn cosine(a: &[DD], b: &[DD]) -> DD {
    let dot = |x: &[DD], y: &[DD]| {
        x.iter()
            .zip(y)
            .fold(DD::new(0.0), |acc, (&u, &v)| acc + u * v)
    };
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

/// Cross-entropy of `logits` against `target`.
fn xent(logits: &[DD], target: usize) -> DD {
    let max = logits
        .iter()
        .copied()
        .fold(logits[0], |m, l| if l > m { l } else { m });
    let sum = logits
        .iter()
        .fold(DD::new(0.0), |acc, &l| acc + (l - max).exp());
    max + sum.ln() - logits[target]
}

fn view_loss(h: &[Vec<DD>], batch: &AssembledBatch, tau: f64) -> DD {
    let total = batch.instances.iter().fold(DD::new(0.0), |acc, inst| {
        let a = &h[inst.anchor];
        let logits: Vec<DD> = std::iter::once(inst.positive)
            .chain(inst.negatives.iter().copied())
            .map(|s| cosine(a, &h[s]) / tau)
            .collect();
        acc + xent(&logits, 0)
    });
    total / batch.instances.len() as f64
}

/// The two pretraining losses over a fixed batch. Slots hold
/// `(token ids, decision head?)`.
pub struct PretrainOracle<'a> {
    pub shape: Shape,
    pub slots: &'a [(Vec<u32>, bool)],
    pub lcc: &'a AssembledBatch,
    pub ldm: &'a AssembledBatch,
    pub tau: f64,
}

impl PretrainOracle<'_> {
    fn head_blocks(&self, decision: bool) -> (usize, usize) {
        if decision && !self.shape.share_heads {
            (3, 4)
        } else {
            (1, 2)
        }
    }

    fn pooled(&self, p: &[Vec<DD>], ids: &[u32]) -> Vec<DD> {
        let d = self.shape.embed_dim;
        let mut sum = vec![DD::new(0.0); d];
        let mut n = 0.0;
        for &id in ids.iter().filter(|&&id| id != PAD_ID) {
            for (k, s) in sum.iter_mut().enumerate() {
                *s += p[0][id as usize * d + k];
            }
            n += 1.0;
        }
        sum.into_iter().map(|s| (s / n).tanh()).collect()
    }

    fn project(&self, p: &[Vec<DD>], a: &[DD], decision: bool) -> Vec<DD> {
        let (w, b) = self.head_blocks(decision);
        affine(a, &p[w], &p[b])
    }

    /// `[L_lcc, L_ldm]`.
    pub fn losses(&self, h: &[Vec<DD>]) -> [DD; 2] {
        [
            view_loss(h, self.lcc, self.tau),
            view_loss(h, self.ldm, self.tau),
        ]
    }

    pub fn forward(&self, p: &[Vec<DD>]) -> [DD; 2] {
        let h: Vec<Vec<DD>> = self
            .slots
            .iter()
            .map(|(ids, dec)| self.project(p, &self.pooled(p, ids), *dec))
            .collect();
        self.losses(&h)
    }

    /// Central differences of both losses at every coordinate. Only the
    /// slots a coordinate feeds are re-encoded; a coordinate that feeds no
    /// slot has derivative exactly zero.
    pub fn gradients(&self, params: &[Vec<f64>], step: f64) -> [Vec<Vec<f64>>; 2] {
        let mut p = to_dd(params);
        let a: Vec<Vec<DD>> = self
            .slots
            .iter()
            .map(|(ids, _)| self.pooled(&p, ids))
            .collect();
        let h: Vec<Vec<DD>> = self
            .slots
            .iter()
            .zip(&a)
            .map(|((_, dec), a)| self.project(&p, a, *dec))
            .collect();
        let d = self.shape.embed_dim;
        let mut out = [Vec::new(), Vec::new()];
        for b in 0..p.len() {
            let affected: Vec<Vec<usize>> = (0..p[b].len())
                .map(|i| {
                    (0..self.slots.len())
                        .filter(|&s| {
                            let (ids, dec) = &self.slots[s];
                            if b == 0 {
                                ids.contains(&((i / d) as u32))
                            } else {
                                let (w, bias) = self.head_blocks(*dec);
                                b == w || b == bias
                            }
                        })
                        .collect()
                })
                .collect();
            let mut grads = [vec![0.0; p[b].len()], vec![0.0; p[b].len()]];
            for i in 0..p[b].len() {
                if affected[i].is_empty() {
                    continue;
                }
                let x = p[b][i];
                let mut at = |dx: f64| {
                    p[b][i] = x + dx;
                    let mut hh = h.clone();
                    for &s in &affected[i] {
                        let (ids, dec) = &self.slots[s];
                        let act = if b == 0 {
                            self.pooled(&p, ids)
                        } else {
                            a[s].clone()
                        };
                        hh[s] = self.project(&p, &act, *dec);
                    }
                    p[b][i] = x;
                    self.losses(&hh)
                };
                let (plus, minus) = (at(step), at(-step));
                for o in 0..2 {
                    grads[o][i] = central(plus[o], minus[o], step);
                }
            }
            let [g0, g1] = grads;
            out[0].push(g0);
            out[1].push(g1);
        }
        out
    }
}

pub fn to_dd(params: &[Vec<f64>]) -> Vec<Vec<DD>> {
    params
        .iter()
        .map(|b| b.iter().map(|&x| DD::new(x)).collect())
        .collect()
}

/// Central difference. In double-double the round-off term is about
/// `1e-32 · |f| / h`, so a tiny step leaves only the `h² f‴ / 6` truncation.
fn central(plus: DD, minus: DD, h: f64) -> f64 {
    ((plus - minus) / (DD::new(h) * 2.0)).to_f64()
}

/// Mean over cases of the summed per-head cross-entropy. Head `k` owns the
/// two blocks after the encoder's at offset `2k`; cases hold
/// `(token ids, target index per head)`.
pub struct ClassifierOracle<'a> {
    pub shape: Shape,
    pub cases: &'a [(Vec<u32>, Vec<usize>)],
}

impl ClassifierOracle<'_> {
    fn head(&self, p: &[Vec<DD>], h: &[DD], k: usize, target: usize) -> DD {
        let base = self.shape.encoder_blocks();
        xent(&affine(h, &p[base + 2 * k], &p[base + 2 * k + 1]), target)
    }

    fn case_terms(&self, p: &[Vec<DD>], h: &[DD], targets: &[usize]) -> Vec<DD> {
        targets
            .iter()
            .enumerate()
            .map(|(k, &t)| self.head(p, h, k, t))
            .collect()
    }

    fn mean(&self, terms: &[Vec<DD>]) -> DD {
        let total = terms.iter().flatten().fold(DD::new(0.0), |acc, &t| acc + t);
        total / self.cases.len() as f64
    }

    pub fn forward(&self, p: &[Vec<DD>]) -> DD {
        let terms: Vec<Vec<DD>> = self
            .cases
            .iter()
            .map(|(ids, targets)| self.case_terms(p, &encode(p, &self.shape, ids, false), targets))
            .collect();
        self.mean(&terms)
    }

    /// Central differences at every coordinate, re-evaluating only the
    /// cases and heads a coordinate feeds.
    pub fn gradients(&self, params: &[Vec<f64>], step: f64) -> Vec<Vec<f64>> {
        let mut p = to_dd(params);
        let shape = &self.shape;
        let d = shape.embed_dim;
        let base = shape.encoder_blocks();
        let pooled = |p: &[Vec<DD>], ids: &[u32]| -> Vec<DD> {
            let real: Vec<u32> = ids.iter().copied().filter(|&id| id != PAD_ID).collect();
            (0..d)
                .map(|k| {
                    let s = real
                        .iter()
                        .fold(DD::new(0.0), |acc, &id| acc + p[0][id as usize * d + k]);
                    (s / real.len() as f64).tanh()
                })
                .collect()
        };
        let a: Vec<Vec<DD>> = self.cases.iter().map(|(ids, _)| pooled(&p, ids)).collect();
        let h: Vec<Vec<DD>> = a.iter().map(|a| affine(a, &p[1], &p[2])).collect();
        let terms: Vec<Vec<DD>> = self
            .cases
            .iter()
            .zip(&h)
            .map(|((_, t), h)| self.case_terms(&p, h, t))
            .collect();

        let mut out = Vec::with_capacity(p.len());
        for b in 0..p.len() {
            let mut grads = vec![0.0; p[b].len()];
            // Decision-head blocks never reach a classifier loss.
            if b >= 3 && b < base {
                out.push(grads);
                continue;
            }
            for i in 0..p[b].len() {
                let cases: Vec<usize> = (0..self.cases.len())
                    .filter(|&c| b != 0 || self.cases[c].0.contains(&((i / d) as u32)))
                    .collect();
                if cases.is_empty() {
                    continue;
                }
                let x = p[b][i];
                let mut at = |dx: f64| {
                    p[b][i] = x + dx;
                    let mut tt = terms.clone();
                    for &c in &cases {
                        let (ids, targets) = &self.cases[c];
                        if b >= base {
                            let k = (b - base) / 2;
                            tt[c][k] = self.head(&p, &h[c], k, targets[k]);
                        } else {
                            let act = if b == 0 {
                                pooled(&p, ids)
                            } else {
                                a[c].clone()
                            };
                            tt[c] = self.case_terms(&p, &affine(&act, &p[1], &p[2]), targets);
                        }
                    }
                    p[b][i] = x;
                    self.mean(&tt)
                };
                grads[i] = central(at(step), at(-step), step);
            }
            out.push(grads);
        }
        out
    }
}
