//! Case ingestion, filtering, and tokenization.
//!
//! Cases and label catalogs arrive as JSONL. Malformed lines are skipped and
//! reported; a case that names a label missing from the catalog is fatal.

mod synth;
mod tokenize;
mod vocab;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, LabelKind, Result};

pub use synth::{generate, SynthConfig, SynthCorpus};
pub use tokenize::{count_tokens, split_tokens};
pub use vocab::{
    build_vocab, TokenSequence, Vocabulary, CLS_ID, DEFAULT_MAX_SEQ_LEN, PAD_ID, UNK_ID,
};

/// Number of term-of-penalty classes.
pub const TERM_CLASSES: usize = 11;

/// One criminal fact with its article, charge, and term labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LegalCase {
    pub case_id: String,
    #[serde(rename = "fact")]
    pub fact_text: String,
    pub article_id: u32,
    pub charge_id: u32,
    pub term_id: u8,
}

impl LegalCase {
    pub fn label_pair(&self) -> (u32, u32) {
        (self.article_id, self.charge_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub name: String,
    pub text: String,
}

/// Law-article texts and charge definitions keyed by label id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelCatalog {
    pub articles: BTreeMap<u32, CatalogEntry>,
    pub charges: BTreeMap<u32, CatalogEntry>,
}

impl LabelCatalog {
    pub fn is_empty(&self) -> bool {
        self.articles.is_empty() && self.charges.is_empty()
    }

    pub fn article(&self, id: u32) -> Result<&CatalogEntry> {
        self.articles
            .get(&id)
            .ok_or_else(|| Error::invalid(format!("article id {id} is not in the catalog")))
    }

    pub fn charge(&self, id: u32) -> Result<&CatalogEntry> {
        self.charges
            .get(&id)
            .ok_or_else(|| Error::invalid(format!("charge id {id} is not in the catalog")))
    }

    /// Every name and text in catalog order, articles first.
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.articles
            .values()
            .chain(self.charges.values())
            .flat_map(|e| [e.name.as_str(), e.text.as_str()])
    }

    /// Checks that every case's labels have catalog entries.
    pub fn check_cases(&self, cases: &[LegalCase]) -> Result<()> {
        for case in cases {
            if !self.articles.contains_key(&case.article_id) {
                return Err(Error::UnknownLabel {
                    case_id: case.case_id.clone(),
                    kind: LabelKind::Article,
                    id: case.article_id,
                });
            }
            if !self.charges.contains_key(&case.charge_id) {
                return Err(Error::UnknownLabel {
                    case_id: case.case_id.clone(),
                    kind: LabelKind::Charge,
                    id: case.charge_id,
                });
            }
        }
        Ok(())
    }

    pub fn write_jsonl(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        let rows = self
            .articles
            .iter()
            .map(|(id, e)| ("article", id, e))
            .chain(self.charges.iter().map(|(id, e)| ("charge", id, e)));
        for (kind, id, entry) in rows {
            let record = CatalogRecord {
                kind: kind.to_string(),
                id: *id,
                name: entry.name.clone(),
                text: entry.text.clone(),
            };
            serde_json::to_writer(&mut *out, &record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogRecord {
    kind: String,
    id: u32,
    name: String,
    text: String,
}

/// A line that could not be parsed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedLine {
    pub path: PathBuf,
    pub line: usize,
    pub reason: String,
}

impl std::fmt::Display for SkippedLine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}: {}", self.path.display(), self.line, self.reason)
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadedCorpus {
    pub cases: Vec<LegalCase>,
    pub catalog: LabelCatalog,
    pub skipped: Vec<SkippedLine>,
}

fn for_each_line(path: &Path, mut f: impl FnMut(usize, &str)) -> Result<()> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        f(i + 1, &line);
    }
    Ok(())
}

/// Reads cases JSONL, skipping and recording malformed lines.
pub fn read_cases(path: &Path) -> Result<(Vec<LegalCase>, Vec<SkippedLine>)> {
    let mut cases = Vec::new();
    let mut skipped = Vec::new();
    for_each_line(path, |line, text| {
        let parsed = serde_json::from_str::<LegalCase>(text)
            .map_err(|e| e.to_string())
            .and_then(|case| {
                if usize::from(case.term_id) >= TERM_CLASSES {
                    Err(format!("term_id {} outside [0, 10]", case.term_id))
                } else {
                    Ok(case)
                }
            });
        match parsed {
            Ok(case) => cases.push(case),
            Err(reason) => skipped.push(SkippedLine {
                path: path.to_path_buf(),
                line,
                reason,
            }),
        }
    })?;
    Ok((cases, skipped))
}

/// Reads catalog JSONL, skipping and recording malformed lines.
pub fn read_catalog(path: &Path) -> Result<(LabelCatalog, Vec<SkippedLine>)> {
    let mut catalog = LabelCatalog::default();
    let mut skipped = Vec::new();
    for_each_line(path, |line, text| {
        let parsed = serde_json::from_str::<CatalogRecord>(text)
            .map_err(|e| e.to_string())
            .and_then(|r| {
                if r.name.trim().is_empty() || r.text.trim().is_empty() {
                    return Err("empty name or text".to_string());
                }
                let table = match r.kind.as_str() {
                    "article" => &mut catalog.articles,
                    "charge" => &mut catalog.charges,
                    other => return Err(format!("unknown kind {other:?}")),
                };
                if table.contains_key(&r.id) {
                    return Err(format!("duplicate {} id {}", r.kind, r.id));
                }
                table.insert(
                    r.id,
                    CatalogEntry {
                        name: r.name,
                        text: r.text,
                    },
                );
                Ok(())
            });
        if let Err(reason) = parsed {
            skipped.push(SkippedLine {
                path: path.to_path_buf(),
                line,
                reason,
            });
        }
    })?;
    Ok((catalog, skipped))
}

/// Loads cases and catalog; fails if any case names an uncatalogued label.
pub fn load_corpus(path: &Path, catalog_path: &Path) -> Result<LoadedCorpus> {
    let (cases, mut skipped) = read_cases(path)?;
    let (catalog, catalog_skipped) = read_catalog(catalog_path)?;
    skipped.extend(catalog_skipped);
    catalog.check_cases(&cases)?;
    Ok(LoadedCorpus {
        cases,
        catalog,
        skipped,
    })
}

pub fn write_cases(cases: &[LegalCase], out: &mut impl std::io::Write) -> std::io::Result<()> {
    for case in cases {
        serde_json::to_writer(&mut *out, case)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Applies the data-quality rules: drops short facts, drops case ids that
/// carry more than one article or charge, then repeatedly drops cases whose
/// article or charge has fewer than `min_label_count` survivors until nothing
/// changes.
pub fn filter_cases(
    cases: &[LegalCase],
    min_tokens: usize,
    min_label_count: usize,
) -> Vec<LegalCase> {
    let mut labels_by_id: HashMap<&str, HashSet<(u32, u32)>> = HashMap::new();
    for case in cases {
        labels_by_id
            .entry(case.case_id.as_str())
            .or_default()
            .insert(case.label_pair());
    }

    let mut seen = HashSet::new();
    let mut kept: Vec<LegalCase> = cases
        .iter()
        .filter(|c| labels_by_id[c.case_id.as_str()].len() == 1)
        .filter(|c| seen.insert(c.case_id.as_str()))
        .filter(|c| count_tokens(&c.fact_text) >= min_tokens)
        .cloned()
        .collect();

    loop {
        let mut articles: HashMap<u32, usize> = HashMap::new();
        let mut charges: HashMap<u32, usize> = HashMap::new();
        for case in &kept {
            *articles.entry(case.article_id).or_default() += 1;
            *charges.entry(case.charge_id).or_default() += 1;
        }
        let before = kept.len();
        kept.retain(|c| {
            articles[&c.article_id] >= min_label_count && charges[&c.charge_id] >= min_label_count
        });
        if kept.len() == before {
            return kept;
        }
    }
}

/// Deterministic train/held-out split. Returns `(train, held_out)`, each in
/// input order.
pub fn split_holdout(
    cases: &[LegalCase],
    fraction: f64,
    seed: u64,
) -> (Vec<LegalCase>, Vec<LegalCase>) {
    use rand::seq::SliceRandom;

    let mut order: Vec<usize> = (0..cases.len()).collect();
    order.shuffle(&mut crate::rng::seeded(seed, 0x5eed_5917));
    let n_held = ((cases.len() as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
    let mut held = vec![false; cases.len()];
    for &i in &order[..n_held] {
        held[i] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (case, held) in cases.iter().zip(held) {
        if held {
            test.push(case.clone());
        } else {
            train.push(case.clone());
        }
    }
    (train, test)
}
