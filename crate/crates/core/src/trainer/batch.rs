//! Batch-aware contrastive pools.
//!
//! Each batch encodes `5b` texts once, laid out in slots:
//!
//! ```text
//! [0, b)    facts f_i            [3b, 4b)  positive decisions d_i⁺
//! [b, 2b)   positive facts f_i⁺  [4b, 5b)  hard-negative decisions d_i⁻
//! [2b, 3b)  hard-negative facts f_i⁻
//! ```
//!
//! Case clustering for instance `i` contrasts `f_i⁺` against `f_i⁻` and every
//! other instance's fact, positive and negative (`3b − 2` negatives).
//! Decision matching contrasts `d_i⁺` against `d_i⁻` and every other
//! instance's two decisions (`2b − 1` negatives). Negatives that are the
//! anchor or positive itself are then collapsed away.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use crate::corpus::{LabelCatalog, LegalCase, TokenSequence, Vocabulary};
use crate::encoder::Embedding;
use crate::error::{Error, Result};
use crate::miner::{LccPool, LdmPool};
use crate::objective::ContrastiveInstance;
use crate::verbalizer::Template;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnchorPools {
    pub case: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
    pub decision_negatives: Vec<(u32, u32)>,
}

/// Tokenized facts and decisions plus the mined pools for every usable
/// anchor.
#[derive(Debug, Clone)]
pub struct PretrainCorpus {
    pub case_ids: Vec<String>,
    pub labels: Vec<(u32, u32)>,
    pub facts: Vec<TokenSequence>,
    pub anchors: Vec<AnchorPools>,
    decisions: BTreeMap<(u32, u32), TokenSequence>,
}

impl PretrainCorpus {
    /// Anchors are the cases that have both a clustering pool and a decision
    /// pool, in case order. Pools naming unknown cases are an error.
    pub fn new(
        cases: &[LegalCase],
        vocab: &Vocabulary,
        catalog: &LabelCatalog,
        template: &Template,
        lcc: &[LccPool],
        ldm: &[LdmPool],
    ) -> Result<Self> {
        let pos: HashMap<&str, usize> = cases
            .iter()
            .enumerate()
            .map(|(i, c)| (c.case_id.as_str(), i))
            .collect();
        if pos.len() != cases.len() {
            return Err(Error::invalid("pretraining corpus has duplicate case ids"));
        }
        let find = |id: &str| -> Result<usize> {
            pos.get(id)
                .copied()
                .ok_or_else(|| Error::invalid(format!("pool references unknown case {id}")))
        };

        let mut lcc_by_case: HashMap<usize, &LccPool> = HashMap::new();
        for p in lcc {
            lcc_by_case.insert(find(&p.anchor)?, p);
        }
        let mut ldm_by_case: HashMap<usize, &LdmPool> = HashMap::new();
        for p in ldm {
            ldm_by_case.insert(find(&p.anchor)?, p);
        }

        let mut decisions = BTreeMap::new();
        let mut anchors = Vec::new();
        for (i, case) in cases.iter().enumerate() {
            let (Some(l), Some(d)) = (lcc_by_case.get(&i), ldm_by_case.get(&i)) else {
                continue;
            };
            if l.negatives.is_empty() || d.decision_negatives.is_empty() {
                return Err(Error::invalid(format!(
                    "empty pool for anchor {}",
                    case.case_id
                )));
            }
            if d.true_pair != case.label_pair() {
                return Err(Error::invalid(format!(
                    "decision pool for {} was built for labels {:?}",
                    case.case_id, d.true_pair
                )));
            }
            let positive = find(&l.positive)?;
            let negatives = l
                .negatives
                .iter()
                .map(|n| find(n))
                .collect::<Result<Vec<_>>>()?;
            for &pair in std::iter::once(&case.label_pair()).chain(&d.decision_negatives) {
                if let std::collections::btree_map::Entry::Vacant(e) = decisions.entry(pair) {
                    let text = template.render(pair.0, pair.1, catalog)?.text;
                    e.insert(vocab.tokenize(&text));
                }
            }
            anchors.push(AnchorPools {
                case: i,
                positive,
                negatives,
                decision_negatives: d.decision_negatives.clone(),
            });
        }

        Ok(Self {
            case_ids: cases.iter().map(|c| c.case_id.clone()).collect(),
            labels: cases.iter().map(LegalCase::label_pair).collect(),
            facts: cases.iter().map(|c| vocab.tokenize(&c.fact_text)).collect(),
            anchors,
            decisions,
        })
    }

    pub fn decision(&self, pair: (u32, u32)) -> Option<&TokenSequence> {
        self.decisions.get(&pair)
    }

    /// Draws one hard negative fact and one hard negative decision per
    /// anchor, uniformly from its pools.
    pub fn sample_batch(&self, anchors: &[usize], rng: &mut impl Rng) -> BatchPools {
        let instances = anchors
            .iter()
            .map(|&a| {
                let pools = &self.anchors[a];
                let hard_negative = pools.negatives[rng.gen_range(0..pools.negatives.len())];
                let decision_negative =
                    pools.decision_negatives[rng.gen_range(0..pools.decision_negatives.len())];
                BatchInstance {
                    fact: pools.case,
                    positive: pools.positive,
                    hard_negative,
                    decision_positive: self.labels[pools.case],
                    decision_negative,
                }
            })
            .collect();
        BatchPools { instances }
    }
}

/// One batch member, as case indices and decision label pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchInstance {
    pub fact: usize,
    pub positive: usize,
    pub hard_negative: usize,
    pub decision_positive: (u32, u32),
    pub decision_negative: (u32, u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPools {
    pub instances: Vec<BatchInstance>,
}

/// What a slot holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotText {
    Fact(usize),
    Decision((u32, u32)),
}

impl BatchPools {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// The `5b` slot texts in layout order.
    pub fn slots(&self) -> Vec<SlotText> {
        let it = &self.instances;
        it.iter()
            .map(|x| SlotText::Fact(x.fact))
            .chain(it.iter().map(|x| SlotText::Fact(x.positive)))
            .chain(it.iter().map(|x| SlotText::Fact(x.hard_negative)))
            .chain(it.iter().map(|x| SlotText::Decision(x.decision_positive)))
            .chain(it.iter().map(|x| SlotText::Decision(x.decision_negative)))
            .collect()
    }
}

/// An instance expressed as slot indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotInstance {
    pub anchor: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssembledBatch {
    pub instances: Vec<SlotInstance>,
    /// Negatives per instance before duplicates were collapsed.
    pub pre_collapse: usize,
    /// Negatives removed across the batch.
    pub collapsed: usize,
}

impl AssembledBatch {
    pub fn bind<'a>(
        &self,
        embeddings: &'a [Embedding],
        temperature: f64,
    ) -> Vec<ContrastiveInstance<'a>> {
        self.instances
            .iter()
            .map(|s| {
                ContrastiveInstance::new(
                    &embeddings[s.anchor],
                    &embeddings[s.positive],
                    s.negatives.iter().map(|&n| &embeddings[n]).collect(),
                    temperature,
                )
            })
            .collect()
    }
}

fn check_batch(batch: &BatchPools) -> Result<usize> {
    let b = batch.len();
    if b < 2 {
        return Err(Error::invalid(format!(
            "in-batch negatives need b ≥ 2, got {b}"
        )));
    }
    Ok(b)
}

/// Case-clustering instances: `f_i⁻`, then `f_j`, `f_j⁺`, `f_j⁻` for `j ≠ i`.
pub fn assemble_lcc_batch(batch: &BatchPools) -> Result<AssembledBatch> {
    let b = check_batch(batch)?;
    let slots = batch.slots();
    let case_of = |s: usize| match slots[s] {
        SlotText::Fact(c) => c,
        SlotText::Decision(_) => unreachable!("fact slot"),
    };
    let mut collapsed = 0;
    let mut instances = Vec::with_capacity(b);
    for (i, inst) in batch.instances.iter().enumerate() {
        if inst.fact == inst.positive
            || inst.fact == inst.hard_negative
            || inst.positive == inst.hard_negative
        {
            return Err(Error::invalid(format!(
                "instance {i} reuses one case across anchor/positive/negative roles"
            )));
        }
        let mut negatives = vec![2 * b + i];
        for group in 0..3 {
            negatives.extend((0..b).filter(|&j| j != i).map(|j| group * b + j));
        }
        debug_assert_eq!(negatives.len(), 3 * b - 2);
        let before = negatives.len();
        negatives.retain(|&s| {
            let c = case_of(s);
            c != inst.fact && c != inst.positive
        });
        collapsed += before - negatives.len();
        instances.push(SlotInstance {
            anchor: i,
            positive: b + i,
            negatives,
        });
    }
    Ok(AssembledBatch {
        instances,
        pre_collapse: 3 * b - 2,
        collapsed,
    })
}

/// Decision-matching instances: `d_i⁻`, then `d_j⁺`, `d_j⁻` for `j ≠ i`.
/// Decisions identical to `d_i⁺` are dropped from `i`'s negatives.
pub fn assemble_ldm_batch(batch: &BatchPools) -> Result<AssembledBatch> {
    let b = check_batch(batch)?;
    let slots = batch.slots();
    let pair_of = |s: usize| match slots[s] {
        SlotText::Decision(p) => p,
        SlotText::Fact(_) => unreachable!("decision slot"),
    };
    let mut collapsed = 0;
    let mut instances = Vec::with_capacity(b);
    for (i, inst) in batch.instances.iter().enumerate() {
        if inst.decision_negative == inst.decision_positive {
            return Err(Error::invalid(format!(
                "instance {i} samples its true decision as the hard negative"
            )));
        }
        let mut negatives = vec![4 * b + i];
        for group in 3..5 {
            negatives.extend((0..b).filter(|&j| j != i).map(|j| group * b + j));
        }
        debug_assert_eq!(negatives.len(), 2 * b - 1);
        let before = negatives.len();
        negatives.retain(|&s| pair_of(s) != inst.decision_positive);
        collapsed += before - negatives.len();
        instances.push(SlotInstance {
            anchor: i,
            positive: 3 * b + i,
            negatives,
        });
    }
    if collapsed > 0 {
        log::debug!("collapsed {collapsed} duplicate decision negatives in a batch of {b}");
    }
    Ok(AssembledBatch {
        instances,
        pre_collapse: 2 * b - 1,
        collapsed,
    })
}
