//! Hard-negative mining.
//!
//! Case clustering pools come from dense retrieval over a [`CorpusIndex`]:
//! the best-ranked case with the anchor's exact label pair is the positive,
//! the best-ranked cases that differ in article or charge are the
//! negatives. Decision matching pools come from a trained classifier's most
//! confusable wrong labels, crossed into every article × charge pairing.

mod index;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{LabelCatalog, LegalCase, Vocabulary};
use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::trainer::{finetune, Classifier, FinetuneConfig, FinetuneReport, Task};

pub use index::{
    embed_corpus, read_matrix, read_sidecar, write_matrix, write_sidecar, CorpusIndex, SidecarRow,
};

/// Pool sizes used when mining: negatives per case-clustering pool, and
/// negative labels per task for decision pools.
pub const LCC_POOL_SIZE: usize = 15;
pub const LABEL_NEGATIVES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub row: usize,
    pub score: f64,
}

fn row_norms(index: &CorpusIndex) -> Result<Vec<f64>> {
    (0..index.len())
        .map(|i| {
            let n = index
                .row(i)
                .iter()
                .map(|&x| f64::from(x) * f64::from(x))
                .sum::<f64>()
                .sqrt();
            if n == 0.0 {
                Err(Error::ZeroNorm)
            } else {
                Ok(n)
            }
        })
        .collect()
}

/// All other rows by descending cosine similarity, ties by ascending case id.
fn rank_all(index: &CorpusIndex, norms: &[f64], anchor: usize) -> Vec<Hit> {
    let a = index.row(anchor);
    let mut hits: Vec<Hit> = (0..index.len())
        .filter(|&j| j != anchor)
        .map(|j| {
            let dot: f64 = a
                .iter()
                .zip(index.row(j))
                .map(|(&x, &y)| f64::from(x) * f64::from(y))
                .sum();
            Hit {
                row: j,
                score: (dot / (norms[anchor] * norms[j])).clamp(-1.0, 1.0),
            }
        })
        .collect();
    hits.sort_by(|x, y| {
        y.score
            .total_cmp(&x.score)
            .then_with(|| index.case_ids[x.row].cmp(&index.case_ids[y.row]))
    });
    hits
}

/// Brute-force cosine retrieval of the `k` nearest other cases.
pub fn topk_retrieve(index: &CorpusIndex, anchor_id: &str, k: usize) -> Result<Vec<Hit>> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let anchor = index
        .position(anchor_id)
        .ok_or_else(|| Error::invalid(format!("anchor {anchor_id} is not in the index")))?;
    let norms = row_norms(index)?;
    let mut hits = rank_all(index, &norms, anchor);
    hits.truncate(k);
    Ok(hits)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LccPool {
    pub anchor: String,
    pub positive: String,
    pub negatives: Vec<String>,
    pub backfilled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LccMiningConfig {
    pub pool_size: usize,
    /// How many retrieved neighbours are scanned for negatives before
    /// falling back to random backfill.
    pub sweep_depth: usize,
    pub seed: u64,
}

impl Default for LccMiningConfig {
    fn default() -> Self {
        Self {
            pool_size: LCC_POOL_SIZE,
            sweep_depth: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LccMining {
    pub pools: Vec<LccPool>,
    /// Anchors whose label pair has no other case.
    pub skipped: Vec<String>,
}

enum AnchorOutcome {
    Pool(LccPool),
    Skipped(String),
}

/// Mines one pool per anchor, in index order.
pub fn mine_lcc_pools(index: &CorpusIndex, config: &LccMiningConfig) -> Result<LccMining> {
    if config.pool_size == 0 {
        return Err(Error::invalid("pool_size must be at least 1"));
    }
    let norms = row_norms(index)?;
    let outcomes: Vec<AnchorOutcome> = (0..index.len())
        .into_par_iter()
        .map(|anchor| mine_one(index, &norms, anchor, config))
        .collect::<Result<_>>()?;
    let mut out = LccMining::default();
    for o in outcomes {
        match o {
            AnchorOutcome::Pool(p) => out.pools.push(p),
            AnchorOutcome::Skipped(id) => out.skipped.push(id),
        }
    }
    Ok(out)
}

fn mine_one(
    index: &CorpusIndex,
    norms: &[f64],
    anchor: usize,
    config: &LccMiningConfig,
) -> Result<AnchorOutcome> {
    let labels = index.labels[anchor];
    let anchor_id = &index.case_ids[anchor];
    let ranking = rank_all(index, norms, anchor);
    let Some(positive) = ranking.iter().find(|h| index.labels[h.row] == labels) else {
        return Ok(AnchorOutcome::Skipped(anchor_id.clone()));
    };

    let mut negatives: Vec<usize> = ranking
        .iter()
        .take(config.sweep_depth)
        .filter(|h| index.labels[h.row] != labels)
        .map(|h| h.row)
        .take(config.pool_size)
        .collect();

    let backfilled = negatives.len() < config.pool_size;
    if backfilled {
        let mut rest: Vec<usize> = (0..index.len())
            .filter(|&j| index.labels[j] != labels && !negatives.contains(&j))
            .collect();
        if rest.is_empty() && negatives.is_empty() {
            return Err(Error::invalid(format!(
                "no case with a different label exists for anchor {anchor_id}"
            )));
        }
        let mut rng = crate::rng::seeded(config.seed, anchor as u64);
        rest.shuffle(&mut rng);
        let need = config.pool_size - negatives.len();
        negatives.extend(rest.iter().take(need));
        // Too few distinct candidates: repeat with replacement.
        let distinct = negatives.clone();
        while negatives.len() < config.pool_size {
            negatives.push(distinct[rng.gen_range(0..distinct.len())]);
        }
    }

    Ok(AnchorOutcome::Pool(LccPool {
        anchor: anchor_id.clone(),
        positive: index.case_ids[positive.row].clone(),
        negatives: negatives
            .into_iter()
            .map(|j| index.case_ids[j].clone())
            .collect(),
        backfilled,
    }))
}

/// Hard-negative label pool for one anchor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LdmPool {
    pub anchor: String,
    pub true_pair: (u32, u32),
    pub neg_articles: Vec<u32>,
    pub neg_charges: Vec<u32>,
    pub decision_negatives: Vec<(u32, u32)>,
}

/// Persisted form; the decision pool is rebuilt on load.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdmPoolRecord {
    pub anchor: String,
    pub neg_articles: Vec<u32>,
    pub neg_charges: Vec<u32>,
}

impl LdmPool {
    pub fn new(
        anchor: String,
        true_pair: (u32, u32),
        neg_articles: Vec<u32>,
        neg_charges: Vec<u32>,
    ) -> Result<Self> {
        let decision_negatives = build_decision_pool(true_pair, &neg_articles, &neg_charges)?;
        Ok(Self {
            anchor,
            true_pair,
            neg_articles,
            neg_charges,
            decision_negatives,
        })
    }

    pub fn record(&self) -> LdmPoolRecord {
        LdmPoolRecord {
            anchor: self.anchor.clone(),
            neg_articles: self.neg_articles.clone(),
            neg_charges: self.neg_charges.clone(),
        }
    }
}

/// Every pairing of `{true article} ∪ neg_articles` with
/// `{true charge} ∪ neg_charges` except the true pair, article-major in
/// ascending id order. Three negatives per task yield 15 decisions.
pub fn build_decision_pool(
    true_pair: (u32, u32),
    neg_articles: &[u32],
    neg_charges: &[u32],
) -> Result<Vec<(u32, u32)>> {
    let candidates = |truth: u32, negs: &[u32], kind: &str| -> Result<Vec<u32>> {
        let mut all = vec![truth];
        for &n in negs {
            if all.contains(&n) {
                return Err(Error::invalid(format!(
                    "{kind} negatives must be distinct and exclude the true label {truth}, got {negs:?}"
                )));
            }
            all.push(n);
        }
        all.sort_unstable();
        Ok(all)
    };
    let articles = candidates(true_pair.0, neg_articles, "article")?;
    let charges = candidates(true_pair.1, neg_charges, "charge")?;
    Ok(articles
        .iter()
        .flat_map(|&a| charges.iter().map(move |&c| (a, c)))
        .filter(|&p| p != true_pair)
        .collect())
}

/// The `n` highest-logit labels other than `truth`, ties to the smaller id.
pub fn top_negative_labels(
    logits: &[f64],
    labels: &[u32],
    truth: u32,
    n: usize,
) -> Result<Vec<u32>> {
    if labels.len() < n + 1 {
        return Err(Error::invalid(format!(
            "need at least {} labels to pick {n} negatives, catalog has {}",
            n + 1,
            labels.len()
        )));
    }
    let mut order: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != truth).collect();
    order.sort_by(|&x, &y| {
        logits[y]
            .total_cmp(&logits[x])
            .then(labels[x].cmp(&labels[y]))
    });
    Ok(order.into_iter().take(n).map(|i| labels[i]).collect())
}

/// Classifier whose article and charge heads propose confusable labels.
pub type MinerClassifier = Classifier;

/// Trains the label classifier on labelled cases. Each of the article and
/// charge tasks must see at least two distinct labels.
pub fn train_miner_classifier(
    encoder: EncoderModel,
    cases: &[LegalCase],
    catalog: &LabelCatalog,
    vocab: &Vocabulary,
    config: &FinetuneConfig,
) -> Result<(MinerClassifier, FinetuneReport)> {
    if cases.is_empty() {
        return Err(Error::invalid("miner classifier needs training cases"));
    }
    for task in [Task::Articles, Task::Charges] {
        let mut seen: Vec<u32> = cases.iter().map(|c| task.gold(c)).collect();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() < 2 {
            return Err(Error::invalid(format!(
                "miner classifier needs at least two {task} labels in the training data"
            )));
        }
    }
    let mut clf = Classifier::new(encoder, &[Task::Articles, Task::Charges], catalog)?;
    let encoded = cases
        .iter()
        .map(|c| clf.encode_case(c, vocab))
        .collect::<Result<Vec<_>>>()?;
    let config = FinetuneConfig {
        tasks: vec![Task::Articles, Task::Charges],
        ..config.clone()
    };
    let report = finetune(&mut clf, &encoded, &config)?;
    Ok((clf, report))
}

/// Confusable wrong articles and charges for one case.
pub fn mine_label_negatives(
    clf: &MinerClassifier,
    case: &LegalCase,
    vocab: &Vocabulary,
    n: usize,
) -> Result<(Vec<u32>, Vec<u32>)> {
    let seq = vocab.tokenize(&case.fact_text);
    let mut out = Vec::with_capacity(2);
    for task in [Task::Articles, Task::Charges] {
        let head = clf
            .head(task)
            .ok_or_else(|| Error::invalid(format!("miner classifier lacks a {task} head")))?;
        let logits = clf.logits(&seq, task)?;
        out.push(top_negative_labels(
            &logits,
            &head.labels,
            task.gold(case),
            n,
        )?);
    }
    let charges = out.pop().unwrap();
    let articles = out.pop().unwrap();
    Ok((articles, charges))
}

/// One decision pool per case, in input order.
pub fn mine_ldm_pools(
    clf: &MinerClassifier,
    cases: &[LegalCase],
    vocab: &Vocabulary,
    n: usize,
) -> Result<Vec<LdmPool>> {
    cases
        .par_iter()
        .map(|c| {
            let (a, ch) = mine_label_negatives(clf, c, vocab, n)?;
            LdmPool::new(c.case_id.clone(), c.label_pair(), a, ch)
        })
        .collect()
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    crate::fsio::write_atomic(path, |w: &mut dyn Write| {
        for r in rows {
            serde_json::to_writer(&mut *w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_lcc_pools(path: &Path, pools: &[LccPool]) -> Result<()> {
    write_jsonl(path, pools)
}

pub fn read_lcc_pools(path: &Path) -> Result<Vec<LccPool>> {
    read_jsonl(path)
}

pub fn write_ldm_pools(path: &Path, pools: &[LdmPool]) -> Result<()> {
    let records: Vec<LdmPoolRecord> = pools.iter().map(LdmPool::record).collect();
    write_jsonl(path, &records)
}

/// Reads decision pools, taking each anchor's true labels from `cases`.
pub fn read_ldm_pools(path: &Path, cases: &[LegalCase]) -> Result<Vec<LdmPool>> {
    let truth: std::collections::HashMap<&str, (u32, u32)> = cases
        .iter()
        .map(|c| (c.case_id.as_str(), c.label_pair()))
        .collect();
    read_jsonl::<LdmPoolRecord>(path)?
        .into_iter()
        .map(|r| {
            let pair = *truth.get(r.anchor.as_str()).ok_or_else(|| {
                Error::invalid(format!(
                    "decision pool anchor {} is not in the corpus",
                    r.anchor
                ))
            })?;
            LdmPool::new(r.anchor, pair, r.neg_articles, r.neg_charges)
        })
        .collect()
}
