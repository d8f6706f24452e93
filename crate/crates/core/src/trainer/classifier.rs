use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{LabelCatalog, LegalCase, TokenSequence, Vocabulary, TERM_CLASSES};
use crate::encoder::{
    read_checkpoint, write_checkpoint, Checkpoint, EncoderGradients, EncoderModel, Head, Linear,
    NamedTensor, ParamBlocks,
};
use crate::error::{Error, Result};
use crate::objective::softmax_xent;

/// A prediction task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Articles,
    Charges,
    Term,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Articles, Task::Charges, Task::Term];

    pub fn name(self) -> &'static str {
        match self {
            Task::Articles => "articles",
            Task::Charges => "charges",
            Task::Term => "term",
        }
    }

    pub fn gold(self, case: &LegalCase) -> u32 {
        match self {
            Task::Articles => case.article_id,
            Task::Charges => case.charge_id,
            Task::Term => u32::from(case.term_id),
        }
    }

    /// Label ids in ascending order.
    pub fn label_space(self, catalog: &LabelCatalog) -> Vec<u32> {
        match self {
            Task::Articles => catalog.articles.keys().copied().collect(),
            Task::Charges => catalog.charges.keys().copied().collect(),
            Task::Term => (0..TERM_CLASSES as u32).collect(),
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown task {s:?}")))
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// `Linear_T`: projects a fact embedding onto one task's labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub task: Task,
    /// Label id for each logit, ascending.
    pub labels: Vec<u32>,
    pub linear: Linear,
}

impl ClassifierHead {
    /// Zero weights: every label starts equally likely.
    pub fn zeros(task: Task, labels: Vec<u32>, proj_dim: usize) -> Self {
        let n = labels.len();
        Self {
            task,
            labels,
            linear: Linear::zeros(proj_dim, n),
        }
    }

    pub fn index_of(&self, label: u32) -> Option<usize> {
        self.labels.binary_search(&label).ok()
    }

    pub fn logits(&self, h: &[f64]) -> Vec<f64> {
        self.linear.forward(h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskPrediction {
    pub task: Task,
    pub label: u32,
    pub probs: Vec<f64>,
}

/// Softmax with ties in the argmax going to the lowest index.
pub fn softmax_argmax(logits: &[f64]) -> (usize, Vec<f64>) {
    let (_, probs) = softmax_xent(logits, 0);
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate() {
        if l > logits[best] {
            best = i;
        }
    }
    (best, probs)
}

/// Encoder plus one head per task.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub encoder: EncoderModel,
    pub heads: Vec<ClassifierHead>,
}

/// A case ready for training: token ids and the target index per head.
#[derive(Debug, Clone)]
pub struct EncodedCase {
    pub seq: TokenSequence,
    pub targets: Vec<usize>,
}

impl Classifier {
    pub fn new(encoder: EncoderModel, tasks: &[Task], catalog: &LabelCatalog) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::invalid("at least one task is required"));
        }
        let mut tasks = tasks.to_vec();
        tasks.sort();
        tasks.dedup();
        let heads = tasks
            .into_iter()
            .map(|t| {
                let labels = t.label_space(catalog);
                if labels.is_empty() {
                    return Err(Error::invalid(format!(
                        "task {t} has no labels in the catalog"
                    )));
                }
                Ok(ClassifierHead::zeros(t, labels, encoder.proj_dim()))
            })
            .collect::<Result<_>>()?;
        Ok(Self { encoder, heads })
    }

    pub fn head(&self, task: Task) -> Option<&ClassifierHead> {
        self.heads.iter().find(|h| h.task == task)
    }

    pub fn tasks(&self) -> Vec<Task> {
        self.heads.iter().map(|h| h.task).collect()
    }

    pub fn encode_case(&self, case: &LegalCase, vocab: &Vocabulary) -> Result<EncodedCase> {
        let targets = self
            .heads
            .iter()
            .map(|h| {
                let gold = h.task.gold(case);
                h.index_of(gold).ok_or_else(|| {
                    Error::invalid(format!(
                        "case {}: {} label {gold} is outside the head's label set",
                        case.case_id, h.task
                    ))
                })
            })
            .collect::<Result<_>>()?;
        Ok(EncodedCase {
            seq: vocab.tokenize(&case.fact_text),
            targets,
        })
    }

    pub fn logits(&self, seq: &TokenSequence, task: Task) -> Result<Vec<f64>> {
        let head = self
            .head(task)
            .ok_or_else(|| Error::invalid(format!("classifier has no {task} head")))?;
        let h = self.encoder.encode(seq, Head::Fact)?;
        Ok(head.logits(h.as_slice()))
    }

    /// Per task: argmax label (ties to the smallest id) and probabilities.
    pub fn predict(&self, seq: &TokenSequence) -> Result<Vec<TaskPrediction>> {
        let h = self.encoder.encode(seq, Head::Fact)?;
        Ok(self
            .heads
            .iter()
            .map(|head| {
                let (best, probs) = softmax_argmax(&head.logits(h.as_slice()));
                TaskPrediction {
                    task: head.task,
                    label: head.labels[best],
                    probs,
                }
            })
            .collect())
    }

    pub fn zero_grads(&self) -> ClassifierGrads {
        ClassifierGrads {
            encoder: self.encoder.zero_grads(),
            heads: self
                .heads
                .iter()
                .map(|h| Linear::zeros(h.linear.in_dim, h.linear.out_dim))
                .collect(),
        }
    }

    /// Summed per-task cross-entropy for one case; accumulates
    /// `scale · ∂loss/∂θ` into `grads`. Returns the unscaled loss.
    pub fn accumulate(
        &self,
        case: &EncodedCase,
        scale: f64,
        grads: &mut ClassifierGrads,
        freeze_encoder: bool,
    ) -> Result<f64> {
        let h = self.encoder.encode(&case.seq, Head::Fact)?;
        let mut dh = vec![0.0; h.dim()];
        let mut loss = 0.0;
        for ((head, &target), grad) in self.heads.iter().zip(&case.targets).zip(&mut grads.heads) {
            let (l, mut probs) = softmax_xent(&head.logits(h.as_slice()), target);
            loss += l;
            probs[target] -= 1.0;
            for p in &mut probs {
                *p *= scale;
            }
            let d = head.linear.backward(h.as_slice(), &probs, grad);
            for (a, b) in dh.iter_mut().zip(d) {
                *a += b;
            }
        }
        if !freeze_encoder {
            self.encoder
                .encode_backward(&case.seq, Head::Fact, &dh, &mut grads.encoder)?;
        }
        Ok(loss)
    }

    /// Mean over cases of the summed task losses, and its gradient.
    pub fn batch_loss_and_grads(
        &self,
        batch: &[EncodedCase],
        freeze_encoder: bool,
    ) -> Result<(f64, ClassifierGrads)> {
        let mut grads = self.zero_grads();
        let scale = 1.0 / batch.len().max(1) as f64;
        let mut total = 0.0;
        for case in batch {
            total += self.accumulate(case, scale, &mut grads, freeze_encoder)?;
        }
        Ok((total * scale, grads))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_encoder(&self.encoder);
        for h in &self.heads {
            let prefix = format!("head.{}", h.task);
            let labels: Vec<f64> = h.labels.iter().map(|&l| f64::from(l)).collect();
            ck.tensors.push(NamedTensor::from_f64(
                &format!("{prefix}.labels"),
                vec![labels.len()],
                &labels,
            ));
            ck.tensors.push(NamedTensor::from_f64(
                &format!("{prefix}.weight"),
                vec![h.linear.in_dim, h.linear.out_dim],
                &h.linear.weight,
            ));
            ck.tensors.push(NamedTensor::from_f64(
                &format!("{prefix}.bias"),
                vec![h.linear.out_dim],
                &h.linear.bias,
            ));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let encoder = ck.encoder()?;
        let proj = encoder.proj_dim();
        let mut heads = Vec::new();
        for task in Task::ALL {
            let prefix = format!("head.{task}");
            let Some(labels) = ck.tensor(&format!("{prefix}.labels")) else {
                continue;
            };
            let labels: Vec<u32> = labels
                .data
                .iter()
                .map(|&x| {
                    if x >= 0.0 && x.fract() == 0.0 && x < 16_777_216.0 {
                        Ok(x as u32)
                    } else {
                        Err(Error::Corrupt(format!("{prefix}.labels holds {x}")))
                    }
                })
                .collect::<Result<_>>()?;
            let n = labels.len();
            let get = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
                let t = ck
                    .tensor(name)
                    .filter(|t| t.shape == shape)
                    .ok_or_else(|| Error::Corrupt(format!("missing or misshapen {name}")))?;
                Ok(t.to_f64())
            };
            heads.push(ClassifierHead {
                task,
                labels,
                linear: Linear {
                    in_dim: proj,
                    out_dim: n,
                    weight: get(&format!("{prefix}.weight"), &[proj, n])?,
                    bias: get(&format!("{prefix}.bias"), &[n])?,
                },
            });
        }
        if heads.is_empty() {
            return Err(Error::invalid("checkpoint has no classifier heads"));
        }
        Ok(Self { encoder, heads })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_checkpoint(&self.to_checkpoint(), path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&read_checkpoint(path)?)
    }
}

/// Gradients for [`Classifier`]; block order matches
/// [`Classifier::trainable_blocks_mut`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierGrads {
    pub encoder: EncoderGradients,
    pub heads: Vec<Linear>,
}

fn head_blocks(heads: &[Linear]) -> Vec<&[f64]> {
    heads
        .iter()
        .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
        .collect()
}

impl ClassifierGrads {
    pub fn blocks(&self, include_encoder: bool) -> Vec<&[f64]> {
        let mut out = if include_encoder {
            self.encoder.blocks()
        } else {
            Vec::new()
        };
        out.extend(head_blocks(&self.heads));
        out
    }
}

impl Classifier {
    pub fn trainable_blocks_mut(&mut self, include_encoder: bool) -> Vec<&mut [f64]> {
        let mut out = if include_encoder {
            self.encoder.blocks_mut()
        } else {
            Vec::new()
        };
        for h in &mut self.heads {
            out.push(h.linear.weight.as_mut_slice());
            out.push(h.linear.bias.as_mut_slice());
        }
        out
    }

    pub fn trainable_blocks(&self, include_encoder: bool) -> Vec<&[f64]> {
        let mut out = if include_encoder {
            self.encoder.blocks()
        } else {
            Vec::new()
        };
        for h in &self.heads {
            out.push(h.linear.weight.as_slice());
            out.push(h.linear.bias.as_slice());
        }
        out
    }
}
