use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::Command;
use crate::corpus::{
    build_vocab, filter_cases, generate, load_corpus, read_cases, read_catalog, split_holdout,
    write_cases, LabelCatalog, LegalCase, Vocabulary,
};
use crate::encoder::{load_checkpoint, save_checkpoint, EncoderConfig, EncoderModel};
use crate::error::{Error, Result};
use crate::eval::{
    dbi_reductions, evaluate_task, export_embeddings, index_dbi, prediction_entropy, DbiOutput,
    DbiReport, EntropyReport,
};
use crate::miner::{
    embed_corpus, mine_lcc_pools, mine_ldm_pools, read_lcc_pools, read_ldm_pools,
    train_miner_classifier, write_lcc_pools, write_ldm_pools, CorpusIndex, LccMiningConfig,
};
use crate::trainer::{finetune, pretrain, Classifier, PretrainCorpus, Task};
use crate::verbalizer::Template;

/// One line of the predictions file; only the classifier's tasks appear.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub case_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub articles: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub charges: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub term: Option<u32>,
}

impl PredictionRecord {
    pub fn get(&self, task: Task) -> Option<u32> {
        match task {
            Task::Articles => self.articles,
            Task::Charges => self.charges,
            Task::Term => self.term,
        }
    }

    fn set(&mut self, task: Task, label: u32) {
        let slot = match task {
            Task::Articles => &mut self.articles,
            Task::Charges => &mut self.charges,
            Task::Term => &mut self.term,
        };
        *slot = Some(label);
    }
}

struct Ctx<'a> {
    config: &'a RunConfig,
}

impl Ctx<'_> {
    /// A configured path, which must exist when it is an input.
    fn path(&self, key: &str, value: &Option<PathBuf>) -> Result<PathBuf> {
        value
            .clone()
            .ok_or_else(|| Error::invalid(format!("paths.{key} is not set")))
    }

    fn input(&self, key: &str, value: &Option<PathBuf>) -> Result<PathBuf> {
        let p = self.path(key, value)?;
        if !p.exists() {
            return Err(Error::MissingFile(p));
        }
        Ok(p)
    }

    fn first_input(&self, candidates: &[(&str, &Option<PathBuf>)]) -> Result<PathBuf> {
        let (key, value) = candidates
            .iter()
            .find(|(_, v)| v.is_some())
            .ok_or_else(|| Error::invalid(format!("paths.{} is not set", candidates[0].0)))?;
        self.input(key, value)
    }

    fn cases(&self) -> Result<Vec<LegalCase>> {
        load_cases(&self.input("cases", &self.config.paths.cases)?)
    }

    fn test_cases(&self) -> Result<Vec<LegalCase>> {
        load_cases(&self.input("test_cases", &self.config.paths.test_cases)?)
    }

    fn catalog(&self) -> Result<LabelCatalog> {
        let path = self.input("catalog", &self.config.paths.catalog)?;
        let (catalog, skipped) = read_catalog(&path)?;
        if let Some(s) = skipped.first() {
            return Err(Error::invalid(format!("malformed catalog line {s}")));
        }
        Ok(catalog)
    }

    fn vocab(&self) -> Result<Vocabulary> {
        Vocabulary::load(&self.input("vocab", &self.config.paths.vocab)?)
    }

    fn fresh_encoder(&self, vocab: &Vocabulary) -> Result<EncoderModel> {
        let e = &self.config.encoder;
        EncoderModel::init(EncoderConfig {
            vocab_size: vocab.len(),
            embed_dim: e.embed_dim,
            proj_dim: e.proj_dim,
            seed: self.config.seed,
            share_heads: e.share_heads,
        })
    }

    fn reports_dir(&self) -> Result<PathBuf> {
        let dir = self.path("reports", &self.config.paths.reports)?;
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }
}

/// Intermediate files are consumed by later commands, so a malformed line
/// there is an error rather than something to skip.
fn load_cases(path: &Path) -> Result<Vec<LegalCase>> {
    let (cases, skipped) = read_cases(path)?;
    if let Some(s) = skipped.first() {
        return Err(Error::invalid(format!("malformed case line {s}")));
    }
    Ok(cases)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    crate::fsio::write_atomic(path, |w: &mut dyn Write| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")
    })
}

fn write_case_file(path: &Path, cases: &[LegalCase]) -> Result<()> {
    crate::fsio::write_atomic(path, |mut w: &mut dyn Write| write_cases(cases, &mut w))
}

fn write_catalog_file(path: &Path, catalog: &LabelCatalog) -> Result<()> {
    crate::fsio::write_atomic(path, |mut w: &mut dyn Write| catalog.write_jsonl(&mut w))
}

fn check_vocab(model: &EncoderModel, vocab: &Vocabulary) -> Result<()> {
    if vocab.len() != model.config().vocab_size {
        return Err(Error::invalid(format!(
            "checkpoint was built for {} tokens but the vocabulary has {}",
            model.config().vocab_size,
            vocab.len()
        )));
    }
    Ok(())
}

pub fn execute(command: Command, config: &RunConfig) -> Result<()> {
    let ctx = Ctx { config };
    let paths = &config.paths;
    match command {
        Command::SynthData => {
            let corpus = generate(&config.synth);
            write_case_file(&ctx.path("raw_cases", &paths.raw_cases)?, &corpus.cases)?;
            write_catalog_file(
                &ctx.path("raw_catalog", &paths.raw_catalog)?,
                &corpus.catalog,
            )?;
            log::info!("wrote {} synthetic cases", corpus.cases.len());
        }
        Command::Ingest => {
            let loaded = load_corpus(
                &ctx.input("raw_cases", &paths.raw_cases)?,
                &ctx.input("raw_catalog", &paths.raw_catalog)?,
            )?;
            for s in &loaded.skipped {
                log::warn!("skipped {s}");
            }
            let c = &config.corpus;
            let kept = filter_cases(&loaded.cases, c.min_tokens, c.min_label_count);
            let (train, test) = split_holdout(&kept, c.test_fraction, config.seed);
            log::info!(
                "{} cases read, {} skipped lines, {} kept: {} train / {} held out",
                loaded.cases.len(),
                loaded.skipped.len(),
                kept.len(),
                train.len(),
                test.len()
            );
            write_case_file(&ctx.path("cases", &paths.cases)?, &train)?;
            if let Some(p) = &paths.test_cases {
                write_case_file(p, &test)?;
            }
            write_catalog_file(&ctx.path("catalog", &paths.catalog)?, &loaded.catalog)?;
        }
        Command::BuildVocab => {
            let vocab = build_vocab(&ctx.cases()?, &ctx.catalog()?, config.corpus.max_vocab)
                .with_max_seq_len(config.corpus.max_seq_len);
            let text = vocab.to_json();
            crate::fsio::write_atomic(&ctx.path("vocab", &paths.vocab)?, |w: &mut dyn Write| {
                w.write_all(text.as_bytes())
            })?;
            log::info!("vocabulary of {} tokens", vocab.len());
        }
        Command::MineLdm => {
            let (cases, catalog, vocab) = (ctx.cases()?, ctx.catalog()?, ctx.vocab()?);
            let (clf, report) = train_miner_classifier(
                ctx.fresh_encoder(&vocab)?,
                &cases,
                &catalog,
                &vocab,
                &config.mining.classifier,
            )?;
            if let Some(l) = report.epoch_losses.last() {
                log::info!("label classifier final epoch loss {l:.4}");
            }
            clf.save(&ctx.path("miner", &paths.miner)?)?;
            let pools = mine_ldm_pools(&clf, &cases, &vocab, config.mining.label_negatives)?;
            write_ldm_pools(&ctx.path("ldm_pools", &paths.ldm_pools)?, &pools)?;
            log::info!("{} decision pools", pools.len());
        }
        Command::Embed => {
            let ckpt = ctx.first_input(&[
                ("embed_encoder", &paths.embed_encoder),
                ("miner", &paths.miner),
            ])?;
            let (model, vocab) = (load_checkpoint(&ckpt)?, ctx.vocab()?);
            check_vocab(&model, &vocab)?;
            let index = embed_corpus(&model, &vocab, &ctx.cases()?)?;
            index.write(
                &ctx.path("embeddings", &paths.embeddings)?,
                &ctx.path("embeddings_sidecar", &paths.embeddings_sidecar)?,
            )?;
        }
        Command::MineLcc => {
            let index = CorpusIndex::read(
                &ctx.input("embeddings", &paths.embeddings)?,
                &ctx.input("embeddings_sidecar", &paths.embeddings_sidecar)?,
            )?;
            let mining = mine_lcc_pools(
                &index,
                &LccMiningConfig {
                    pool_size: config.mining.pool_size,
                    sweep_depth: config.mining.sweep_depth,
                    seed: config.seed,
                },
            )?;
            let backfilled = mining.pools.iter().filter(|p| p.backfilled).count();
            log::info!(
                "{} case pools ({backfilled} backfilled), {} anchors without a positive",
                mining.pools.len(),
                mining.skipped.len()
            );
            write_lcc_pools(&ctx.path("lcc_pools", &paths.lcc_pools)?, &mining.pools)?;
        }
        Command::Pretrain => {
            let (cases, catalog, vocab) = (ctx.cases()?, ctx.catalog()?, ctx.vocab()?);
            let lcc = read_lcc_pools(&ctx.input("lcc_pools", &paths.lcc_pools)?)?;
            let ldm = read_ldm_pools(&ctx.input("ldm_pools", &paths.ldm_pools)?, &cases)?;
            let template = Template::new(&config.verbalizer.decision_template)?;
            let corpus = PretrainCorpus::new(&cases, &vocab, &catalog, &template, &lcc, &ldm)?;
            let out = ctx.path("encoder", &paths.encoder)?;
            let mut model = ctx.fresh_encoder(&vocab)?;
            pretrain(
                &mut model,
                &corpus,
                &config.pretrain,
                paths.pretrain_dir.as_deref(),
            )?;
            save_checkpoint(&model, &out)?;
        }
        Command::Finetune => {
            let (cases, catalog, vocab) = (ctx.cases()?, ctx.catalog()?, ctx.vocab()?);
            let encoder = match &paths.finetune_init {
                Some(_) => {
                    let m = load_checkpoint(&ctx.input("finetune_init", &paths.finetune_init)?)?;
                    check_vocab(&m, &vocab)?;
                    m
                }
                None => ctx.fresh_encoder(&vocab)?,
            };
            let mut clf = Classifier::new(encoder, &config.finetune.tasks, &catalog)?;
            let encoded = cases
                .iter()
                .map(|c| clf.encode_case(c, &vocab))
                .collect::<Result<Vec<_>>>()?;
            let report = finetune(&mut clf, &encoded, &config.finetune)?;
            if let Some(l) = report.epoch_losses.last() {
                log::info!("finetune final epoch loss {l:.4}");
            }
            clf.save(&ctx.path("classifier", &paths.classifier)?)?;
        }
        Command::Predict => {
            let clf = Classifier::load(&ctx.input("classifier", &paths.classifier)?)?;
            let vocab = ctx.vocab()?;
            check_vocab(&clf.encoder, &vocab)?;
            let records = predict_cases(&clf, &vocab, &ctx.test_cases()?)?;
            crate::fsio::write_atomic(
                &ctx.path("predictions", &paths.predictions)?,
                |w: &mut dyn Write| {
                    for r in &records {
                        serde_json::to_writer(&mut *w, r)?;
                        w.write_all(b"\n")?;
                    }
                    Ok(())
                },
            )?;
        }
        Command::Eval => {
            let gold = ctx.test_cases()?;
            let catalog = ctx.catalog()?;
            let preds = read_predictions(&ctx.input("predictions", &paths.predictions)?)?;
            let reports = evaluate_predictions(&gold, &preds, &catalog, config)?;
            for r in &reports {
                log::info!(
                    "{}: acc {:.4} mp {:.4} mr {:.4} f1 {:.4}",
                    r.task,
                    r.acc,
                    r.mp,
                    r.mr,
                    r.f1
                );
            }
            write_json(&ctx.reports_dir()?.join("eval.json"), &reports)?;
        }
        Command::Entropy => {
            let clf = Classifier::load(&ctx.input("classifier", &paths.classifier)?)?;
            let (vocab, cases) = (ctx.vocab()?, ctx.test_cases()?);
            check_vocab(&clf.encoder, &vocab)?;
            let tasks = if config.eval.entropy_tasks.is_empty() {
                clf.tasks()
            } else {
                config.eval.entropy_tasks.clone()
            };
            let dir = ctx.reports_dir()?;
            for task in tasks {
                let report =
                    prediction_entropy(&clf, &vocab, &cases, task, config.eval.entropy_bins)?;
                log::info!("{task}: mean entropy {:.4}", report.mean);
                report.write_csv(&dir.join(format!("entropy-{task}.csv")))?;
                write_json(
                    &dir.join(format!("entropy-{task}.json")),
                    &EntropySummary::from(&report),
                )?;
            }
        }
        Command::Dbi => {
            let (vocab, cases) = (ctx.vocab()?, ctx.test_cases()?);
            let selected = if config.eval.dbi_charges.is_empty() {
                cases
                    .iter()
                    .map(|c| c.charge_id)
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect()
            } else {
                config.eval.dbi_charges.clone()
            };
            let score = |path: &Path| -> Result<DbiReport> {
                let model = load_checkpoint(path)?;
                check_vocab(&model, &vocab)?;
                index_dbi(&embed_corpus(&model, &vocab, &cases)?, &selected)
            };
            let candidate = score(&ctx.first_input(&[
                ("dbi_candidate", &paths.dbi_candidate),
                ("classifier", &paths.classifier),
            ])?)?;
            let reductions = match &paths.dbi_baseline {
                Some(_) => dbi_reductions(
                    &score(&ctx.input("dbi_baseline", &paths.dbi_baseline)?)?,
                    &candidate,
                )?,
                None => Vec::new(),
            };
            write_json(
                &ctx.reports_dir()?.join("dbi.json"),
                &DbiOutput {
                    charges: candidate.charges,
                    reductions,
                },
            )?;
        }
        Command::ExportEmbeddings => {
            let ckpt = ctx.first_input(&[
                ("export_checkpoint", &paths.export_checkpoint),
                ("classifier", &paths.classifier),
            ])?;
            let (model, vocab) = (load_checkpoint(&ckpt)?, ctx.vocab()?);
            check_vocab(&model, &vocab)?;
            export_embeddings(
                &model,
                &vocab,
                &ctx.test_cases()?,
                &ctx.path("export", &paths.export)?,
                &ctx.path("export_sidecar", &paths.export_sidecar)?,
            )?;
        }
    }
    Ok(())
}

/// Entropy report without the per-case values, which go to the CSV.
#[derive(Debug, Serialize)]
struct EntropySummary<'a> {
    task: &'a str,
    count: usize,
    mean: f64,
    quantiles: &'a [(f64, f64)],
    histogram: &'a crate::eval::Histogram,
}

impl<'a> From<&'a EntropyReport> for EntropySummary<'a> {
    fn from(r: &'a EntropyReport) -> Self {
        Self {
            task: &r.task,
            count: r.values.len(),
            mean: r.mean,
            quantiles: &r.quantiles,
            histogram: &r.histogram,
        }
    }
}

pub fn predict_cases(
    clf: &Classifier,
    vocab: &Vocabulary,
    cases: &[LegalCase],
) -> Result<Vec<PredictionRecord>> {
    use rayon::prelude::*;
    cases
        .par_iter()
        .map(|c| {
            let mut rec = PredictionRecord {
                case_id: c.case_id.clone(),
                articles: None,
                charges: None,
                term: None,
            };
            for p in clf.predict(&vocab.tokenize(&c.fact_text))? {
                rec.set(p.task, p.label);
            }
            Ok(rec)
        })
        .collect()
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
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

/// Scores every task the predictions carry, matching cases by id.
pub fn evaluate_predictions(
    gold: &[LegalCase],
    preds: &[PredictionRecord],
    catalog: &LabelCatalog,
    config: &RunConfig,
) -> Result<Vec<crate::eval::TaskReport>> {
    let by_id: std::collections::HashMap<&str, &PredictionRecord> =
        preds.iter().map(|p| (p.case_id.as_str(), p)).collect();
    let mut reports = Vec::new();
    for task in Task::ALL {
        if !preds.iter().any(|p| p.get(task).is_some()) {
            continue;
        }
        let mut g = Vec::with_capacity(gold.len());
        let mut p = Vec::with_capacity(gold.len());
        for case in gold {
            let label = by_id
                .get(case.case_id.as_str())
                .and_then(|r| r.get(task))
                .ok_or_else(|| {
                    Error::invalid(format!("no {task} prediction for case {}", case.case_id))
                })?;
            g.push(task.gold(case));
            p.push(label);
        }
        reports.push(evaluate_task(
            task,
            &g,
            &p,
            &task.label_space(catalog),
            config.eval.averaging,
        )?);
    }
    if reports.is_empty() {
        return Err(Error::invalid("predictions file carries no task labels"));
    }
    Ok(reports)
}
