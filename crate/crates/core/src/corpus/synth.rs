//! Seeded synthetic corpus with confusable charge clusters.
//!
//! Clusters come in sibling pairs (robbery/theft style). A fact mixes
//! background words shared by every cluster, words shared by the sibling
//! pair, and a few words specific to its own cluster; a fraction of the
//! specific words leak from the sibling. Catalog texts are written from the
//! same family and cluster pools so decisions and facts share vocabulary.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CatalogEntry, LabelCatalog, LegalCase, TERM_CLASSES};

const CHARGE_NAMES: [&str; 6] = [
    "Robbery",
    "Theft",
    "Intentional Homicide",
    "Intentional Injury",
    "Fraud",
    "Provoking Troubles",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub clusters: usize,
    pub cases_per_cluster: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub background_words: usize,
    pub family_words: usize,
    pub cluster_words: usize,
    /// Probability a fact word comes from the sibling-pair pool.
    pub p_family: f64,
    /// Probability a fact word comes from the cluster's own pool.
    pub p_cluster: f64,
    /// Probability a fact word comes from the sibling cluster's pool.
    pub p_leak: f64,
    /// Ascending upper bounds (in months) of the first ten term buckets.
    /// When set, each case draws a sentence length and is bucketed by it;
    /// otherwise term ids are drawn directly.
    pub term_month_bounds: Option<Vec<u32>>,
    /// Set from the run's top-level seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            clusters: 6,
            cases_per_cluster: 200,
            min_words: 20,
            max_words: 36,
            background_words: 150,
            family_words: 24,
            cluster_words: 12,
            p_family: 0.25,
            p_cluster: 0.10,
            p_leak: 0.05,
            term_month_bounds: None,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub cases: Vec<LegalCase>,
    pub catalog: LabelCatalog,
}

fn article_id(cluster: usize) -> u32 {
    232 + cluster as u32
}

fn background(i: usize) -> String {
    format!("t{i:03}")
}

fn family(fam: usize, i: usize) -> String {
    format!("f{fam}w{i:02}")
}

fn specific(cluster: usize, i: usize) -> String {
    format!("k{cluster}w{i:02}")
}

fn sibling(cluster: usize, clusters: usize) -> usize {
    let s = cluster ^ 1;
    if s < clusters {
        s
    } else {
        cluster
    }
}

/// Generates `clusters × cases_per_cluster` cases, interleaved by cluster,
/// plus one article and one charge per cluster.
pub fn generate(config: &SynthConfig) -> SynthCorpus {
    assert!(config.clusters >= 1 && config.min_words <= config.max_words);
    assert!(config.background_words > 0 && config.family_words > 0 && config.cluster_words > 0);
    if let Some(b) = &config.term_month_bounds {
        assert!(b.len() == TERM_CLASSES - 1 && b.windows(2).all(|w| w[0] < w[1]));
    }
    let mut rng = crate::rng::seeded(config.seed, 0x5717_0001);

    let mut catalog = LabelCatalog::default();
    for c in 0..config.clusters {
        let name = CHARGE_NAMES
            .get(c)
            .map(|s| s.to_string())
            .unwrap_or_else(|| format!("Charge {c}"));
        let fam = c / 2;
        let mut article_words = vec![format!("Article {} Provision:", article_id(c))];
        for i in 0..10 {
            article_words.push(if i % 2 == 0 {
                family(fam, rng.gen_range(0..config.family_words))
            } else {
                specific(c, rng.gen_range(0..config.cluster_words))
            });
        }
        article_words.last_mut().unwrap().push('.');
        catalog.articles.insert(
            article_id(c),
            CatalogEntry {
                name: format!("Article {}", article_id(c)),
                text: article_words.join(" "),
            },
        );

        let mut def_words = vec![format!("{name} Definition: {name} refers to")];
        for i in 0..12 {
            def_words.push(if i % 3 == 0 {
                family(fam, rng.gen_range(0..config.family_words))
            } else {
                specific(c, rng.gen_range(0..config.cluster_words))
            });
        }
        def_words.last_mut().unwrap().push('.');
        catalog.charges.insert(
            c as u32,
            CatalogEntry {
                name,
                text: def_words.join(" "),
            },
        );
    }

    let total = config.clusters * config.cases_per_cluster;
    let mut cases = Vec::with_capacity(total);
    for i in 0..total {
        let c = i % config.clusters;
        let sib = sibling(c, config.clusters);
        let len = rng.gen_range(config.min_words..=config.max_words);
        let words: Vec<String> = (0..len)
            .map(|_| {
                let u: f64 = rng.gen();
                if u < config.p_cluster {
                    specific(c, rng.gen_range(0..config.cluster_words))
                } else if u < config.p_cluster + config.p_leak {
                    specific(sib, rng.gen_range(0..config.cluster_words))
                } else if u < config.p_cluster + config.p_leak + config.p_family {
                    family(c / 2, rng.gen_range(0..config.family_words))
                } else {
                    background(rng.gen_range(0..config.background_words))
                }
            })
            .collect();
        let term = match &config.term_month_bounds {
            Some(bounds) => {
                let months = rng.gen_range(6 * c as u32..6 * c as u32 + 24);
                bounds.partition_point(|&b| b <= months)
            }
            None => (2 * c + rng.gen_range(0..4)) % TERM_CLASSES,
        };
        cases.push(LegalCase {
            case_id: format!("synth-{i:05}"),
            fact_text: words.join(" "),
            article_id: article_id(c),
            charge_id: c as u32,
            term_id: term as u8,
        });
    }
    SynthCorpus { cases, catalog }
}
