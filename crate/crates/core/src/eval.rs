//! Metric suite: macro precision/recall/F1, per-example prediction
//! cross-entropy, and the Davies–Bouldin Index over charge clusters.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{LegalCase, Vocabulary};
use crate::encoder::EncoderModel;
use crate::error::{Error, LabelKind, Result};
use crate::miner::{embed_corpus, CorpusIndex};
use crate::objective::softmax_xent;
use crate::trainer::{Classifier, Task};

/// Which classes the macro averages run over.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Classes that occur at least once in the gold labels.
    #[default]
    PresentInGold,
    /// Every class in the label space.
    AllClasses,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub label: u32,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: String,
    pub acc: f64,
    pub mp: f64,
    pub mr: f64,
    pub f1: f64,
    pub per_class: Vec<ClassScores>,
}

/// Scores class indices `0..num_classes`. `per_class` holds every class
/// in index order; the macro means follow `averaging`.
pub fn macro_metrics(
    gold: &[usize],
    pred: &[usize],
    num_classes: usize,
    averaging: Averaging,
) -> Result<TaskReport> {
    if gold.len() != pred.len() {
        return Err(Error::Shape {
            expected: format!("{} predictions", gold.len()),
            actual: format!("{}", pred.len()),
        });
    }
    if let Some(&bad) = gold.iter().chain(pred).find(|&&y| y >= num_classes) {
        return Err(Error::invalid(format!(
            "label index {bad} outside 0..{num_classes}"
        )));
    }
    let mut tp = vec![0usize; num_classes];
    let mut predicted = vec![0usize; num_classes];
    let mut support = vec![0usize; num_classes];
    for (&g, &p) in gold.iter().zip(pred) {
        support[g] += 1;
        predicted[p] += 1;
        if g == p {
            tp[g] += 1;
        }
    }
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let per_class: Vec<ClassScores> = (0..num_classes)
        .map(|c| {
            let precision = ratio(tp[c], predicted[c]);
            let recall = ratio(tp[c], support[c]);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassScores {
                label: c as u32,
                precision,
                recall,
                f1,
                support: support[c],
            }
        })
        .collect();
    let counted: Vec<&ClassScores> = per_class
        .iter()
        .filter(|c| averaging == Averaging::AllClasses || c.support > 0)
        .collect();
    let mean = |f: fn(&ClassScores) -> f64| {
        if counted.is_empty() {
            0.0
        } else {
            counted.iter().map(|c| f(c)).sum::<f64>() / counted.len() as f64
        }
    };
    Ok(TaskReport {
        task: String::new(),
        acc: ratio(tp.iter().sum(), gold.len()),
        mp: mean(|c| c.precision),
        mr: mean(|c| c.recall),
        f1: mean(|c| c.f1),
        per_class,
    })
}

/// [`macro_metrics`] over raw label ids drawn from `label_space`; the
/// report's `per_class` entries carry the ids.
pub fn evaluate_task(
    task: Task,
    gold: &[u32],
    pred: &[u32],
    label_space: &[u32],
    averaging: Averaging,
) -> Result<TaskReport> {
    let index = |ids: &[u32]| -> Result<Vec<usize>> {
        ids.iter()
            .map(|id| {
                label_space.binary_search(id).map_err(|_| {
                    Error::invalid(format!("{task} label {id} is not in the label space"))
                })
            })
            .collect()
    };
    let mut report = macro_metrics(&index(gold)?, &index(pred)?, label_space.len(), averaging)?;
    report.task = task.name().to_string();
    for c in &mut report.per_class {
        c.label = label_space[c.label as usize];
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` ascending edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub const DEFAULT_BINS: usize = 50;

impl Histogram {
    /// Uniform bins over `[0, max(values)]`.
    pub fn new(values: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let hi = values.iter().copied().fold(0.0, f64::max);
        let edges = (0..=bins).map(|i| hi * i as f64 / bins as f64).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let b = if hi > 0.0 {
                ((v / hi * bins as f64) as usize).min(bins - 1)
            } else {
                0
            };
            counts[b] += 1;
        }
        Self { edges, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub task: String,
    pub case_ids: Vec<String>,
    /// `−ln P(gold)` per case.
    pub values: Vec<f64>,
    pub mean: f64,
    /// `(q, value)` at q = 0.1, 0.25, 0.5, 0.75, 0.9 (nearest rank).
    pub quantiles: Vec<(f64, f64)>,
    pub histogram: Histogram,
}

impl EntropyReport {
    pub fn from_values(task: Task, case_ids: Vec<String>, values: Vec<f64>, bins: usize) -> Self {
        let mean = if values.is_empty() {
            0.0
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        };
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let quantiles = [0.1, 0.25, 0.5, 0.75, 0.9]
            .iter()
            .map(|&q| {
                let v = if sorted.is_empty() {
                    0.0
                } else {
                    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
                    sorted[rank - 1]
                };
                (q, v)
            })
            .collect();
        let histogram = Histogram::new(&values, bins);
        Self {
            task: task.name().to_string(),
            case_ids,
            values,
            mean,
            quantiles,
            histogram,
        }
    }

    /// `case_id,entropy`
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::fsio::write_atomic(path, |w: &mut dyn Write| {
            writeln!(w, "case_id,entropy")?;
            let mut csv = csv::Writer::from_writer(w);
            for (id, v) in self.case_ids.iter().zip(&self.values) {
                csv.write_record([id.as_str(), &v.to_string()])
                    .map_err(std::io::Error::other)?;
            }
            csv.flush()
        })
    }
}

/// Per-case cross-entropy of the gold label under `task`'s head,
/// computed from logits so tiny probabilities do not underflow.
pub fn prediction_entropy(
    classifier: &Classifier,
    vocab: &Vocabulary,
    cases: &[LegalCase],
    task: Task,
    bins: usize,
) -> Result<EntropyReport> {
    let head = classifier
        .head(task)
        .ok_or_else(|| Error::invalid(format!("classifier has no {task} head")))?;
    let values: Vec<f64> = cases
        .par_iter()
        .map(|case| {
            let gold = task.gold(case);
            let target = head.index_of(gold).ok_or_else(|| Error::UnknownLabel {
                case_id: case.case_id.clone(),
                kind: match task {
                    Task::Articles => LabelKind::Article,
                    _ => LabelKind::Charge,
                },
                id: gold,
            })?;
            let logits = classifier.logits(&vocab.tokenize(&case.fact_text), task)?;
            Ok(softmax_xent(&logits, target).0.max(0.0))
        })
        .collect::<Result<_>>()?;
    Ok(EntropyReport::from_values(
        task,
        cases.iter().map(|c| c.case_id.clone()).collect(),
        values,
        bins,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbiEntry {
    pub charge_id: u32,
    pub dbi: f64,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbiReport {
    pub charges: Vec<DbiEntry>,
    pub centroids: Vec<Vec<f64>>,
    /// Centroid distances, symmetric with a zero diagonal.
    pub m: Vec<Vec<f64>>,
}

impl DbiReport {
    pub fn get(&self, charge_id: u32) -> Option<&DbiEntry> {
        self.charges.iter().find(|e| e.charge_id == charge_id)
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Davies–Bouldin Index per selected charge, in `selected` order:
/// `S_i` is the mean distance of members to their centroid, `M_ij` the
/// centroid distance, `DBI_i = max_{j≠i} (S_i + S_j) / M_ij`. Points with
/// unselected charges are ignored.
pub fn dbi(points: &[Vec<f64>], charge_labels: &[u32], selected: &[u32]) -> Result<DbiReport> {
    if points.len() != charge_labels.len() {
        return Err(Error::Shape {
            expected: format!("{} labels", points.len()),
            actual: format!("{}", charge_labels.len()),
        });
    }
    if selected.len() < 2 {
        return Err(Error::invalid("DBI needs at least two selected charges"));
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = selected.iter().find(|c| !seen.insert(**c)) {
        return Err(Error::invalid(format!("charge {dup} selected twice")));
    }
    let dim = points.first().map_or(0, Vec::len);
    let members: Vec<Vec<&[f64]>> = selected
        .iter()
        .map(|&c| {
            let m: Vec<&[f64]> = points
                .iter()
                .zip(charge_labels)
                .filter(|(_, &l)| l == c)
                .map(|(p, _)| p.as_slice())
                .collect();
            if m.is_empty() {
                Err(Error::invalid(format!(
                    "selected charge {c} has no embeddings"
                )))
            } else {
                Ok(m)
            }
        })
        .collect::<Result<_>>()?;
    let centroids: Vec<Vec<f64>> = members
        .iter()
        .map(|m| {
            let mut mu = vec![0.0; dim];
            for p in m {
                for (a, x) in mu.iter_mut().zip(*p) {
                    *a += x;
                }
            }
            mu.iter().map(|x| x / m.len() as f64).collect()
        })
        .collect();
    let s: Vec<f64> = members
        .iter()
        .zip(&centroids)
        .map(|(m, mu)| m.iter().map(|p| euclid(p, mu)).sum::<f64>() / m.len() as f64)
        .collect();
    let k = selected.len();
    let mut m = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let d = euclid(&centroids[i], &centroids[j]);
            if d == 0.0 {
                return Err(Error::invalid(format!(
                    "charges {} and {} have coincident centroids",
                    selected[i], selected[j]
                )));
            }
            m[i][j] = d;
            m[j][i] = d;
        }
    }
    let charges = (0..k)
        .map(|i| DbiEntry {
            charge_id: selected[i],
            dbi: (0..k)
                .filter(|&j| j != i)
                .map(|j| (s[i] + s[j]) / m[i][j])
                .fold(f64::NEG_INFINITY, f64::max),
            s: s[i],
        })
        .collect();
    Ok(DbiReport {
        charges,
        centroids,
        m,
    })
}

/// DBI of a fact-embedding index over the selected charges.
pub fn index_dbi(index: &CorpusIndex, selected: &[u32]) -> Result<DbiReport> {
    let points: Vec<Vec<f64>> = (0..index.len())
        .map(|i| index.row(i).iter().map(|&x| x as f64).collect())
        .collect();
    let charges: Vec<u32> = index.labels.iter().map(|l| l.1).collect();
    dbi(&points, &charges, selected)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbiDelta {
    pub charge_id: u32,
    pub baseline: f64,
    pub candidate: f64,
    /// `baseline − candidate`; positive means the candidate separates
    /// this charge better.
    pub reduction: f64,
}

pub fn dbi_reductions(baseline: &DbiReport, candidate: &DbiReport) -> Result<Vec<DbiDelta>> {
    baseline
        .charges
        .iter()
        .map(|b| {
            let c = candidate.get(b.charge_id).ok_or_else(|| {
                Error::invalid(format!("candidate report lacks charge {}", b.charge_id))
            })?;
            Ok(DbiDelta {
                charge_id: b.charge_id,
                baseline: b.dbi,
                candidate: c.dbi,
                reduction: b.dbi - c.dbi,
            })
        })
        .collect()
}

/// DBI output file: per-charge entries and, when a baseline was given,
/// reductions relative to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbiOutput {
    pub charges: Vec<DbiEntry>,
    pub reductions: Vec<DbiDelta>,
}

/// Fact embeddings in the miner's matrix format plus the label sidecar.
pub fn export_embeddings(
    model: &EncoderModel,
    vocab: &Vocabulary,
    cases: &[LegalCase],
    matrix_path: &Path,
    sidecar_path: &Path,
) -> Result<CorpusIndex> {
    let index = embed_corpus(model, vocab, cases)?;
    index.write(matrix_path, sidecar_path)?;
    Ok(index)
}
