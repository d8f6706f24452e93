#![allow(dead_code)]

pub mod dd;
pub mod reference;

use std::path::{Path, PathBuf};
use std::process::Command;

use duet::corpus::{build_vocab, CatalogEntry, LabelCatalog, LegalCase, Vocabulary};
use duet::miner::{LccPool, LdmPool};
use duet::trainer::PretrainCorpus;
use duet::verbalizer::{Template, DEFAULT_TEMPLATE};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Worst coordinate under `|a − fd| / max(1e-8, |fd|)`, as
/// `(error, analytic, fd)`.
pub fn max_relative_error(analytic: &[Vec<f64>], fd: &[Vec<f64>]) -> (f64, f64, f64) {
    assert_eq!(analytic.len(), fd.len());
    analytic
        .iter()
        .zip(fd)
        .flat_map(|(a, f)| {
            assert_eq!(a.len(), f.len());
            a.iter()
                .zip(f)
                .map(|(&a, &f)| ((a - f).abs() / f.abs().max(1e-8), a, f))
        })
        .fold((0.0, 0.0, 0.0), |w, e| if e.0 > w.0 { e } else { w })
}

pub fn catalog(n_articles: u32, n_charges: u32) -> LabelCatalog {
    let mut catalog = LabelCatalog::default();
    for i in 0..n_articles {
        catalog.articles.insert(
            100 + i,
            CatalogEntry {
                name: format!("Article {}", 100 + i),
                text: format!("provision a{i} clause b{}", i % 2),
            },
        );
    }
    for i in 0..n_charges {
        catalog.charges.insert(
            i,
            CatalogEntry {
                name: format!("Crime{i}"),
                text: format!("definition c{i} conduct b{}", i % 2),
            },
        );
    }
    catalog
}

/// Random small corpus with mined-looking pools: `n` cases over four label
/// pairs, same-pair positives and different-pair negatives.
pub struct Toy {
    pub cases: Vec<LegalCase>,
    pub catalog: LabelCatalog,
    pub vocab: Vocabulary,
    pub corpus: PretrainCorpus,
}

pub fn toy_corpus(rng: &mut impl Rng, n: usize) -> Toy {
    let catalog = catalog(4, 4);
    let words = [
        "a0", "a1", "a2", "a3", "c0", "c1", "c2", "c3", "b0", "b1", "x", "y", "z",
    ];
    let cases: Vec<LegalCase> = (0..n)
        .map(|i| {
            let len = rng.gen_range(1..8);
            let fact: Vec<&str> = (0..len).map(|_| *words.choose(rng).unwrap()).collect();
            LegalCase {
                case_id: format!("t{i:03}"),
                fact_text: fact.join(" "),
                article_id: 100 + (i % 4) as u32,
                charge_id: (i % 4) as u32,
                term_id: (i % 11) as u8,
            }
        })
        .collect();
    let vocab = build_vocab(&cases, &catalog, 64);
    let lcc: Vec<LccPool> = (0..n)
        .map(|i| LccPool {
            anchor: cases[i].case_id.clone(),
            positive: cases[(i + 4) % n].case_id.clone(),
            negatives: (1..4).map(|d| cases[(i + d) % n].case_id.clone()).collect(),
            backfilled: false,
        })
        .collect();
    let ldm: Vec<LdmPool> = cases
        .iter()
        .map(|c| {
            let arts: Vec<u32> = (100..104).filter(|&a| a != c.article_id).collect();
            let chs: Vec<u32> = (0..4).filter(|&x| x != c.charge_id).collect();
            LdmPool::new(c.case_id.clone(), c.label_pair(), arts, chs).unwrap()
        })
        .collect();
    let template = Template::new(DEFAULT_TEMPLATE).unwrap();
    let corpus = PretrainCorpus::new(&cases, &vocab, &catalog, &template, &lcc, &ldm).unwrap();
    Toy {
        cases,
        catalog,
        vocab,
        corpus,
    }
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_duet")
}

pub fn synthetic_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic.toml")
}

/// Runs the binary in `dir` and returns its exit code.
pub fn duet(dir: &Path, args: &[&str]) -> i32 {
    let out = Command::new(bin())
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs");
    if !out.status.success() {
        eprintln!("duet {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    out.status.code().unwrap_or(-1)
}

/// Every file under `dir`, relative path and bytes, sorted by path.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.push((
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                ));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
