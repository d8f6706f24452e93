//! Run configuration: one TOML file with a section per module, plus
//! `section.key=value` overrides from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{SynthConfig, DEFAULT_MAX_SEQ_LEN};
use crate::error::{Error, Result};
use crate::eval::{Averaging, DEFAULT_BINS};
use crate::miner::{LABEL_NEGATIVES, LCC_POOL_SIZE};
use crate::trainer::{FinetuneConfig, PretrainConfig, Task};
use crate::verbalizer::DEFAULT_TEMPLATE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Drives every random choice: synthetic data, splits, init, shuffles,
    /// backfill and negative sampling.
    pub seed: u64,
    pub paths: PathsConfig,
    pub corpus: CorpusConfig,
    pub encoder: EncoderSection,
    pub mining: MiningConfig,
    pub verbalizer: VerbalizerConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut config = Self {
            seed: 42,
            paths: PathsConfig::default(),
            corpus: CorpusConfig::default(),
            encoder: EncoderSection::default(),
            mining: MiningConfig::default(),
            verbalizer: VerbalizerConfig::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            eval: EvalConfig::default(),
            synth: SynthConfig::default(),
        };
        config.propagate_seed();
        config
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub raw_cases: Option<PathBuf>,
    pub raw_catalog: Option<PathBuf>,
    pub cases: Option<PathBuf>,
    pub test_cases: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub miner: Option<PathBuf>,
    pub embed_encoder: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub embeddings_sidecar: Option<PathBuf>,
    pub lcc_pools: Option<PathBuf>,
    pub ldm_pools: Option<PathBuf>,
    pub pretrain_dir: Option<PathBuf>,
    pub encoder: Option<PathBuf>,
    pub finetune_init: Option<PathBuf>,
    pub classifier: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub reports: Option<PathBuf>,
    pub dbi_candidate: Option<PathBuf>,
    pub dbi_baseline: Option<PathBuf>,
    pub export_checkpoint: Option<PathBuf>,
    pub export: Option<PathBuf>,
    pub export_sidecar: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub min_tokens: usize,
    pub min_label_count: usize,
    pub max_vocab: usize,
    pub max_seq_len: usize,
    pub test_fraction: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            min_tokens: 10,
            min_label_count: 100,
            max_vocab: 20_000,
            max_seq_len: DEFAULT_MAX_SEQ_LEN,
            test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub embed_dim: usize,
    pub proj_dim: usize,
    pub share_heads: bool,
}

impl Default for EncoderSection {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            proj_dim: 256,
            share_heads: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningConfig {
    pub pool_size: usize,
    pub sweep_depth: usize,
    pub label_negatives: usize,
    /// Training of the classifier that proposes confusable labels.
    pub classifier: FinetuneConfig,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            pool_size: LCC_POOL_SIZE,
            sweep_depth: 100,
            label_negatives: LABEL_NEGATIVES,
            classifier: FinetuneConfig {
                tasks: vec![Task::Articles, Task::Charges],
                ..FinetuneConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerbalizerConfig {
    pub decision_template: String,
}

impl Default for VerbalizerConfig {
    fn default() -> Self {
        Self {
            decision_template: DEFAULT_TEMPLATE.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub averaging: Averaging,
    pub entropy_bins: usize,
    /// Empty means every task the classifier has.
    pub entropy_tasks: Vec<Task>,
    /// Charges whose clusters DBI compares; empty means every charge in
    /// the evaluated cases.
    pub dbi_charges: Vec<u32>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            averaging: Averaging::PresentInGold,
            entropy_bins: DEFAULT_BINS,
            entropy_tasks: Vec::new(),
            dbi_charges: Vec::new(),
        }
    }
}

/// `(key, meaning)` for every configuration key, in file order.
pub const KEY_DOCS: &[(&str, &str)] = &[
    ("seed", "Seed for every random choice in the pipeline."),
    (
        "paths.raw_cases",
        "Unfiltered cases JSONL read by `ingest`, written by `synth-data`.",
    ),
    (
        "paths.raw_catalog",
        "Label catalog JSONL read by `ingest`, written by `synth-data`.",
    ),
    (
        "paths.cases",
        "Filtered training cases written by `ingest`.",
    ),
    (
        "paths.test_cases",
        "Held-out cases written by `ingest`; input to predict/eval/entropy/dbi/export.",
    ),
    (
        "paths.catalog",
        "Catalog copy written by `ingest` and read by later commands.",
    ),
    ("paths.vocab", "Vocabulary JSON."),
    (
        "paths.miner",
        "Checkpoint of the label classifier trained by `mine-ldm`.",
    ),
    (
        "paths.embed_encoder",
        "Checkpoint `embed` encodes with; falls back to `paths.miner`.",
    ),
    (
        "paths.embeddings",
        "Fact embedding matrix written by `embed`.",
    ),
    (
        "paths.embeddings_sidecar",
        "Label sidecar CSV of `paths.embeddings`.",
    ),
    ("paths.lcc_pools", "Case-clustering pools JSONL."),
    ("paths.ldm_pools", "Decision-matching pools JSONL."),
    (
        "paths.pretrain_dir",
        "Per-epoch checkpoints and `loss.csv` of `pretrain`.",
    ),
    (
        "paths.encoder",
        "Final pretrained encoder written by `pretrain`.",
    ),
    (
        "paths.finetune_init",
        "Encoder `finetune` starts from; unset means a fresh encoder.",
    ),
    ("paths.classifier", "Fine-tuned classifier checkpoint."),
    (
        "paths.predictions",
        "Predictions JSONL written by `predict`, read by `eval`.",
    ),
    (
        "paths.reports",
        "Directory for eval, entropy and DBI reports.",
    ),
    (
        "paths.dbi_candidate",
        "Checkpoint scored by `dbi`; falls back to `paths.classifier`.",
    ),
    (
        "paths.dbi_baseline",
        "Optional checkpoint `dbi` reports reductions against.",
    ),
    (
        "paths.export_checkpoint",
        "Checkpoint `export-embeddings` encodes with; falls back to `paths.classifier`.",
    ),
    (
        "paths.export",
        "Embedding matrix written by `export-embeddings`.",
    ),
    (
        "paths.export_sidecar",
        "Label sidecar CSV of `paths.export`.",
    ),
    ("corpus.min_tokens", "Drop cases with fewer fact tokens."),
    (
        "corpus.min_label_count",
        "Drop articles/charges with fewer surviving cases, to a fixed point.",
    ),
    (
        "corpus.max_vocab",
        "Vocabulary size cap, specials included.",
    ),
    (
        "corpus.max_seq_len",
        "Token limit per text, start marker included.",
    ),
    (
        "corpus.test_fraction",
        "Fraction of filtered cases held out for evaluation.",
    ),
    ("encoder.embed_dim", "Token embedding width."),
    ("encoder.proj_dim", "Representation width."),
    (
        "encoder.share_heads",
        "One projection for facts and decisions.",
    ),
    ("mining.pool_size", "Hard negative cases per anchor."),
    (
        "mining.sweep_depth",
        "Retrieval depth searched for the positive and negatives.",
    ),
    (
        "mining.label_negatives",
        "Wrong articles and wrong charges kept per case.",
    ),
    ("mining.classifier.epochs", "Label classifier epochs."),
    (
        "mining.classifier.learning_rate",
        "Label classifier learning rate.",
    ),
    (
        "mining.classifier.batch_size",
        "Label classifier batch size.",
    ),
    ("mining.classifier.tasks", "Always articles and charges."),
    ("mining.classifier.weight_decay", "Decoupled weight decay."),
    (
        "mining.classifier.grad_clip_norm",
        "Global gradient norm cap.",
    ),
    ("mining.classifier.freeze_encoder", "Train only the heads."),
    (
        "verbalizer.decision_template",
        "Decision text; each placeholder exactly once, in order.",
    ),
    ("pretrain.epochs", "Contrastive epochs."),
    ("pretrain.learning_rate", "AdamW learning rate."),
    ("pretrain.batch_size", "Anchors per batch (at least 2)."),
    ("pretrain.temperature", "InfoNCE temperature."),
    ("pretrain.weight_decay", "Decoupled weight decay."),
    ("pretrain.grad_clip_norm", "Global gradient norm cap."),
    ("pretrain.beta1", "AdamW first-moment decay."),
    ("pretrain.beta2", "AdamW second-moment decay."),
    ("pretrain.eps", "AdamW denominator epsilon."),
    ("finetune.epochs", "Fine-tuning epochs."),
    ("finetune.learning_rate", "AdamW learning rate."),
    ("finetune.batch_size", "Cases per batch."),
    ("finetune.tasks", "Heads to train: articles, charges, term."),
    ("finetune.weight_decay", "Decoupled weight decay."),
    ("finetune.grad_clip_norm", "Global gradient norm cap."),
    ("finetune.freeze_encoder", "Train only the heads."),
    (
        "eval.averaging",
        "`present_in_gold` or `all_classes` for macro means.",
    ),
    ("eval.entropy_bins", "Histogram bins over [0, max entropy]."),
    (
        "eval.entropy_tasks",
        "Tasks to score; empty means all heads.",
    ),
    (
        "eval.dbi_charges",
        "Charges compared by DBI; empty means all.",
    ),
    (
        "synth.clusters",
        "Charge clusters (sibling pairs share vocabulary).",
    ),
    ("synth.cases_per_cluster", "Cases per cluster."),
    ("synth.min_words", "Shortest fact."),
    ("synth.max_words", "Longest fact."),
    ("synth.background_words", "Words shared by every cluster."),
    ("synth.family_words", "Words shared by a sibling pair."),
    ("synth.cluster_words", "Words specific to one cluster."),
    (
        "synth.p_family",
        "Chance a word comes from the family pool.",
    ),
    (
        "synth.p_cluster",
        "Chance a word comes from the cluster's own pool.",
    ),
    (
        "synth.p_leak",
        "Chance a word comes from the sibling's pool.",
    ),
    (
        "synth.term_month_bounds",
        "Optional ten ascending month bounds for term buckets.",
    ),
];

impl RunConfig {
    /// Reads `path` (if any), applies `overrides`, and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::invalid(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut config: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::invalid(format!("config: {e}")))?;
        config.propagate_seed();
        config.validate()?;
        Ok(config)
    }

    fn propagate_seed(&mut self) {
        self.pretrain.seed = self.seed;
        self.finetune.seed = self.seed;
        self.mining.classifier.seed = self.seed;
        self.synth.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.pretrain.validate()?;
        self.finetune.validate()?;
        self.mining.classifier.validate()?;
        crate::verbalizer::Template::new(&self.verbalizer.decision_template)?;
        if !(0.0..1.0).contains(&self.corpus.test_fraction) {
            return Err(Error::invalid("corpus.test_fraction must be in [0, 1)"));
        }
        if self.corpus.max_vocab < 3 || self.corpus.max_seq_len < 1 {
            return Err(Error::invalid(
                "corpus.max_vocab must be ≥ 3 and max_seq_len ≥ 1",
            ));
        }
        if self.mining.pool_size == 0 || self.mining.label_negatives == 0 {
            return Err(Error::invalid("mining pool sizes must be positive"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// `a.b.c=value`. The value is read as a TOML literal when it parses as
/// one and as a bare string otherwise; an empty value removes the key.
pub fn apply_override(table: &mut toml::Table, arg: &str) -> Result<()> {
    let (key, raw) = arg
        .split_once('=')
        .ok_or_else(|| Error::invalid(format!("override {arg:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::invalid(format!("override key {key:?} is malformed")));
    }
    let (last, parents) = parts.split_last().unwrap();
    let mut cur = table;
    for p in parents {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::invalid(format!("override {key:?}: {p} is not a section")))?;
    }
    let raw = raw.trim();
    if raw.is_empty() {
        cur.remove(*last);
        return Ok(());
    }
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    cur.insert(last.to_string(), value);
    Ok(())
}

fn lookup<'a>(table: &'a toml::Table, key: &str) -> Option<&'a toml::Value> {
    let mut parts = key.split('.').peekable();
    let mut cur = table;
    while let Some(p) = parts.next() {
        let v = cur.get(p)?;
        if parts.peek().is_none() {
            return Some(v);
        }
        cur = v.as_table()?;
    }
    None
}

/// Markdown reference of every key with its default.
pub fn config_reference() -> String {
    let defaults: toml::Table = RunConfig::default()
        .to_toml()
        .parse()
        .expect("default config parses");
    let mut out = String::from(
        "# Configuration reference\n\n\
         <!-- Generated by `duet --config-reference`; do not edit by hand. -->\n\n\
         Every key is optional. Override any of them on the command line with\n\
         `section.key=value`; an empty value unsets a path.\n",
    );
    let mut section = "";
    for (key, doc) in KEY_DOCS {
        let sec = key.rsplit_once('.').map_or("", |(s, _)| s);
        if sec != section || !out.contains("| key |") {
            section = sec;
            let title = if sec.is_empty() {
                "top level".to_string()
            } else {
                format!("[{sec}]")
            };
            out.push_str(&format!(
                "\n## {title}\n\n| key | default | meaning |\n|---|---|---|\n"
            ));
        }
        let default = lookup(&defaults, key).map_or("unset".to_string(), |v| format!("`{v}`"));
        let short = key.rsplit_once('.').map_or(*key, |(_, k)| k);
        out.push_str(&format!("| `{short}` | {default} | {doc} |\n"));
    }
    out
}
