use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{split_tokens, LabelCatalog, LegalCase};
use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
/// Start marker prepended to every sequence.
pub const CLS_ID: u32 = 2;

const SPECIALS: [&str; 3] = ["[PAD]", "[UNK]", "[CLS]"];

pub const DEFAULT_MAX_SEQ_LEN: usize = 512;

/// Dense token ids with three reserved specials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    max_seq_len: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabFile {
    max_seq_len: usize,
    tokens: Vec<String>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>, max_seq_len: usize) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..3] != SPECIALS {
            return Err(Error::invalid(
                "vocabulary must start with [PAD], [UNK], [CLS]",
            ));
        }
        if max_seq_len == 0 {
            return Err(Error::invalid("max_seq_len must be at least 1"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self {
            tokens,
            index,
            max_seq_len,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn max_seq_len(&self) -> usize {
        self.max_seq_len
    }

    pub fn with_max_seq_len(mut self, max_seq_len: usize) -> Self {
        assert!(max_seq_len >= 1, "max_seq_len must be at least 1");
        self.max_seq_len = max_seq_len;
        self
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Maps text to ids: start marker first, out-of-vocabulary tokens to
    /// UNK, truncated to `max_seq_len` keeping the prefix.
    pub fn tokenize(&self, text: &str) -> TokenSequence {
        let ids = std::iter::once(CLS_ID)
            .chain(split_tokens(text).map(|t| self.id(t).unwrap_or(UNK_ID)))
            .take(self.max_seq_len)
            .collect();
        TokenSequence { ids }
    }

    /// Inverse of [`tokenize`](Self::tokenize) for in-vocabulary tokens;
    /// padding and the start marker are dropped.
    pub fn detokenize(&self, ids: &[u32]) -> Vec<&str> {
        ids.iter()
            .filter(|&&id| id != PAD_ID && id != CLS_ID)
            .filter_map(|&id| self.token(id))
            .collect()
    }

    pub fn to_json(&self) -> String {
        let file = VocabFile {
            max_seq_len: self.max_seq_len,
            tokens: self.tokens.clone(),
        };
        serde_json::to_string(&file).expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: VocabFile =
            serde_json::from_str(text).map_err(|e| Error::invalid(format!("vocabulary: {e}")))?;
        Self::from_tokens(file.tokens, file.max_seq_len)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Token ids for one text. Never longer than the vocabulary's
/// `max_seq_len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    ids: Vec<u32>,
}

impl TokenSequence {
    pub fn from_ids(ids: Vec<u32>) -> Self {
        Self { ids }
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    /// Count of non-PAD tokens.
    pub fn length(&self) -> usize {
        self.ids.iter().filter(|&&id| id != PAD_ID).count()
    }

    /// Fixed-length form, right-padded with PAD.
    pub fn padded(&self, len: usize) -> Vec<u32> {
        let mut ids = self.ids.clone();
        ids.resize(len.max(ids.len()), PAD_ID);
        ids
    }
}

/// Ranks tokens by frequency over fact texts and catalog texts, ties broken
/// by lexicographic order, keeping at most `max_vocab` entries including the
/// three specials.
pub fn build_vocab(cases: &[LegalCase], catalog: &LabelCatalog, max_vocab: usize) -> Vocabulary {
    assert!(
        max_vocab >= SPECIALS.len(),
        "max_vocab must cover the specials"
    );
    let mut counts: HashMap<&str, u64> = HashMap::new();
    let texts = cases
        .iter()
        .map(|c| c.fact_text.as_str())
        .chain(catalog.texts());
    for text in texts {
        for token in split_tokens(text) {
            *counts.entry(token).or_default() += 1;
        }
    }
    for special in SPECIALS {
        counts.remove(special);
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let tokens = SPECIALS
        .iter()
        .copied()
        .chain(ranked.into_iter().map(|(t, _)| t))
        .take(max_vocab)
        .map(str::to_string)
        .collect();
    Vocabulary::from_tokens(tokens, DEFAULT_MAX_SEQ_LEN).expect("specials are well formed")
}
