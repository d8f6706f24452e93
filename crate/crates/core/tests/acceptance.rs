//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints one PASS/FAIL line even when all of them pass.

mod common;

use std::collections::HashSet;
use std::path::Path;
use std::time::Instant;

use common::reference;
use common::*;
use duet::cli::RunConfig;
use duet::corpus::{build_vocab, generate, SynthConfig, TokenSequence};
use duet::encoder::{
    load_checkpoint, save_checkpoint, Embedding, EncoderConfig, EncoderModel, ParamBlocks,
};
use duet::eval::{dbi, export_embeddings, macro_metrics, Averaging};
use duet::miner::{
    embed_corpus, mine_lcc_pools, mine_ldm_pools, topk_retrieve, train_miner_classifier,
    CorpusIndex, LccMiningConfig,
};
use duet::objective::{info_nce, ContrastiveInstance};
use duet::trainer::{
    assemble_lcc_batch, assemble_ldm_batch, pretrain_loss_and_grads, Classifier, EncodedCase,
    FinetuneConfig, PretrainCorpus, SlotText, Task, Views,
};
use duet::verbalizer::{Template, DEFAULT_TEMPLATE};
use rand::seq::SliceRandom;
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn to_vecs(blocks: Vec<&[f64]>) -> Vec<Vec<f64>> {
    blocks.into_iter().map(<[f64]>::to_vec).collect()
}

const FD_STEP: f64 = 1e-9;
const TAU: f64 = 0.05;

fn gradient_fidelity() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut checks = 0usize;
    for trial in 0..100u64 {
        let mut r = rng(1000 + trial);
        let n = r.gen_range(8..16);
        let toy = toy_corpus(&mut r, n);
        let config = EncoderConfig {
            vocab_size: toy.vocab.len(),
            embed_dim: r.gen_range(2..=8),
            proj_dim: r.gen_range(2..=8),
            seed: trial,
            share_heads: r.gen_bool(0.5),
        };
        let shape = reference::Shape {
            embed_dim: config.embed_dim,
            proj_dim: config.proj_dim,
            share_heads: config.share_heads,
        };
        let model = EncoderModel::init(config).map_err(|e| e.to_string())?;
        let b = r.gen_range(2..=4);
        let mut anchors: Vec<usize> = (0..toy.corpus.anchors.len()).collect();
        anchors.shuffle(&mut r);
        let batch = toy.corpus.sample_batch(&anchors[..b], &mut r);

        let lcc = assemble_lcc_batch(&batch).map_err(|e| e.to_string())?;
        let ldm = assemble_ldm_batch(&batch).map_err(|e| e.to_string())?;
        let slots: Vec<(Vec<u32>, bool)> = batch
            .slots()
            .into_iter()
            .map(|s| match s {
                SlotText::Fact(c) => (toy.corpus.facts[c].ids().to_vec(), false),
                SlotText::Decision(p) => (toy.corpus.decision(p).unwrap().ids().to_vec(), true),
            })
            .collect();
        let oracle = reference::PretrainOracle {
            shape,
            slots: &slots,
            lcc: &lcc,
            ldm: &ldm,
            tau: TAU,
        };
        let reference_losses = oracle.forward(&reference::to_dd(&to_vecs(model.blocks())));
        let fd = oracle.gradients(&to_vecs(model.blocks()), FD_STEP);
        let sum: Vec<Vec<f64>> = fd[0]
            .iter()
            .zip(&fd[1])
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        for (views, oracle) in [
            (Views::Lcc, &fd[0]),
            (Views::Ldm, &fd[1]),
            (Views::Both, &sum),
        ] {
            let (losses, grads) = pretrain_loss_and_grads(&model, &toy.corpus, &batch, TAU, views)
                .map_err(|e| e.to_string())?;
            for (got, want) in [
                (losses.lcc, reference_losses[0]),
                (losses.ldm, reference_losses[1]),
            ] {
                check(
                    (got - want.to_f64()).abs() <= 1e-9 * want.to_f64().abs().max(1.0),
                    || {
                        format!(
                            "trial {trial}: loss {got} but reference forward gives {}",
                            want.to_f64()
                        )
                    },
                )?;
            }
            let (err, a, f) = max_relative_error(&to_vecs(grads.blocks()), oracle);
            check(err <= 1e-4, || {
                format!("trial {trial} {views:?}: relative error {err:.3e} ({a:e} vs {f:e})")
            })?;
            worst = worst.max(err);
            checks += 1;
        }

        let mut clf =
            Classifier::new(model.clone(), &Task::ALL, &toy.catalog).map_err(|e| e.to_string())?;
        for head in &mut clf.heads {
            for w in head
                .linear
                .weight
                .iter_mut()
                .chain(head.linear.bias.iter_mut())
            {
                *w = r.gen_range(-1.0..1.0);
            }
        }
        let cases: Vec<EncodedCase> = toy.cases[..b]
            .iter()
            .map(|c| clf.encode_case(c, &toy.vocab).unwrap())
            .collect();
        let (loss, grads) = clf
            .batch_loss_and_grads(&cases, false)
            .map_err(|e| e.to_string())?;
        let plain: Vec<(Vec<u32>, Vec<usize>)> = cases
            .iter()
            .map(|c| (c.seq.ids().to_vec(), c.targets.clone()))
            .collect();
        let oracle = reference::ClassifierOracle {
            shape: oracle.shape,
            cases: &plain,
        };
        let want = oracle
            .forward(&reference::to_dd(&to_vecs(clf.trainable_blocks(true))))
            .to_f64();
        check((loss - want).abs() <= 1e-9 * want.abs().max(1.0), || {
            format!("trial {trial}: classifier loss {loss} but reference forward gives {want}")
        })?;
        let fd = oracle.gradients(&to_vecs(clf.trainable_blocks(true)), FD_STEP);
        let (err, a, f) = max_relative_error(&to_vecs(grads.blocks(true)), &fd);
        check(err <= 1e-4, || {
            format!("trial {trial} finetune: relative error {err:.3e} ({a:e} vs {f:e})")
        })?;
        worst = worst.max(err);
        checks += 1;
    }
    Ok(format!(
        "max relative error {worst:.2e} over {checks} gradient checks"
    ))
}

fn uniform_logits() -> Outcome {
    let mut r = rng(7);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let dim = r.gen_range(1..=8);
        let pool = r.gen_range(1..=100);
        let v: Embedding = (0..dim)
            .map(|_| r.gen_range(0.1..2.0))
            .collect::<Vec<_>>()
            .into();
        let anchor: Embedding = (0..dim)
            .map(|_| r.gen_range(-2.0..2.0))
            .collect::<Vec<_>>()
            .into();
        let tau = r.gen_range(0.01..1.0);
        let inst = ContrastiveInstance::new(&anchor, &v, vec![&v; pool], tau);
        let loss = info_nce(&inst).map_err(|e| e.to_string())?.value;
        let err = (loss - ((pool + 1) as f64).ln()).abs();
        check(err <= 1e-9, || {
            format!("pool {pool}: loss {loss}, error {err:.2e}")
        })?;
        worst = worst.max(err);
    }
    for classes in 2..=30u32 {
        let catalog = catalog(1, classes);
        let enc = EncoderModel::init(EncoderConfig {
            vocab_size: 12,
            embed_dim: 4,
            proj_dim: 4,
            seed: u64::from(classes),
            share_heads: true,
        })
        .unwrap();
        let clf = Classifier::new(enc, &[Task::Charges], &catalog).map_err(|e| e.to_string())?;
        let cases: Vec<EncodedCase> = (0..5)
            .map(|i| EncodedCase {
                seq: TokenSequence::from_ids(vec![2, 3 + i, 4 + i]),
                targets: vec![(i as usize) % classes as usize],
            })
            .collect();
        let (loss, _) = clf
            .batch_loss_and_grads(&cases, false)
            .map_err(|e| e.to_string())?;
        let err = (loss - f64::from(classes).ln()).abs();
        check(err <= 1e-9, || {
            format!("C = {classes}: loss {loss}, error {err:.2e}")
        })?;
        worst = worst.max(err);
    }
    Ok(format!("max deviation from ln(k+1) / ln C: {worst:.2e}"))
}

fn pool_invariants() -> Outcome {
    let synth = generate(&SynthConfig {
        clusters: 5,
        cases_per_cluster: 200,
        seed: 11,
        ..SynthConfig::default()
    });
    let (cases, catalog) = (&synth.cases, &synth.catalog);
    check(cases.len() == 1000, || format!("{} cases", cases.len()))?;
    let vocab = build_vocab(cases, catalog, 1000);
    let enc = EncoderModel::init(EncoderConfig {
        vocab_size: vocab.len(),
        embed_dim: 16,
        proj_dim: 16,
        seed: 11,
        share_heads: true,
    })
    .unwrap();
    let ft = FinetuneConfig {
        epochs: 2,
        learning_rate: 0.01,
        batch_size: 32,
        ..FinetuneConfig::default()
    };
    let (clf, _) =
        train_miner_classifier(enc, cases, catalog, &vocab, &ft).map_err(|e| e.to_string())?;
    let index = embed_corpus(&clf.encoder, &vocab, cases).map_err(|e| e.to_string())?;
    let lcc = mine_lcc_pools(
        &index,
        &LccMiningConfig {
            pool_size: 15,
            sweep_depth: 1000,
            seed: 11,
        },
    )
    .map_err(|e| e.to_string())?;
    check(lcc.pools.len() == 1000 && lcc.skipped.is_empty(), || {
        format!("{} pools, {} skipped", lcc.pools.len(), lcc.skipped.len())
    })?;
    let labels: std::collections::HashMap<&str, (u32, u32)> = cases
        .iter()
        .map(|c| (c.case_id.as_str(), c.label_pair()))
        .collect();
    for p in &lcc.pools {
        let truth = labels[p.anchor.as_str()];
        check(
            p.positive != p.anchor && labels[p.positive.as_str()] == truth,
            || format!("bad positive for {}", p.anchor),
        )?;
        check(p.negatives.len() == 15, || {
            format!("{} has {} negatives", p.anchor, p.negatives.len())
        })?;
        for n in &p.negatives {
            check(labels[n.as_str()] != truth, || {
                format!("negative {n} of {} shares labels", p.anchor)
            })?;
        }
    }

    let ldm = mine_ldm_pools(&clf, cases, &vocab, 3).map_err(|e| e.to_string())?;
    check(ldm.len() == 1000, || {
        format!("{} decision pools", ldm.len())
    })?;
    for p in &ldm {
        let distinct: HashSet<_> = p.decision_negatives.iter().collect();
        check(
            p.decision_negatives.len() == 15
                && distinct.len() == 15
                && !distinct.contains(&p.true_pair),
            || format!("decision pool of {} is malformed", p.anchor),
        )?;
    }

    let template = Template::new(DEFAULT_TEMPLATE).unwrap();
    let corpus = PretrainCorpus::new(cases, &vocab, catalog, &template, &lcc.pools, &ldm)
        .map_err(|e| e.to_string())?;
    let mut r = rng(3);
    for b in [2usize, 8, 32] {
        let anchors: Vec<usize> = (0..b).collect();
        let batch = corpus.sample_batch(&anchors, &mut r);
        let l = assemble_lcc_batch(&batch).map_err(|e| e.to_string())?;
        let d = assemble_ldm_batch(&batch).map_err(|e| e.to_string())?;
        check(
            l.pre_collapse == 3 * b - 2 && d.pre_collapse == 2 * b - 1,
            || format!("b = {b}: {} / {} negatives", l.pre_collapse, d.pre_collapse),
        )?;
        let kept_l: usize = l.instances.iter().map(|s| s.negatives.len()).sum();
        let kept_d: usize = d.instances.iter().map(|s| s.negatives.len()).sum();
        check(
            kept_l + l.collapsed == b * (3 * b - 2) && kept_d + d.collapsed == b * (2 * b - 1),
            || format!("b = {b}: collapse bookkeeping is off"),
        )?;
    }
    let backfilled = lcc.pools.iter().filter(|p| p.backfilled).count();
    Ok(format!("1000 LCC + 1000 LDM pools valid ({backfilled} backfilled); batch counts hold for b = 2, 8, 32"))
}

#[allow(clippy::needless_range_loop)]
fn oracle_equivalence() -> Outcome {
    let mut r = rng(99);
    for t in 0..200 {
        let n = r.gen_range(2..60);
        let dim = r.gen_range(1..=8);
        let mut rows: Vec<f32> = (0..n * dim).map(|_| r.gen_range(-1.0f32..1.0)).collect();
        // Duplicate a few rows so ties exercise the id tie-break.
        for _ in 0..n / 5 {
            let (a, b) = (r.gen_range(0..n), r.gen_range(0..n));
            let src: Vec<f32> = rows[a * dim..(a + 1) * dim].to_vec();
            rows[b * dim..(b + 1) * dim].copy_from_slice(&src);
        }
        let mut ids: Vec<String> = (0..n).map(|i| format!("case-{i:03}")).collect();
        ids.shuffle(&mut r);
        let index = CorpusIndex::new(ids.clone(), vec![(0, 0); n], dim, rows.clone()).unwrap();
        let anchor = r.gen_range(0..n);
        let k = r.gen_range(1..n);
        let row = |i: usize| -> Vec<f64> {
            rows[i * dim..(i + 1) * dim]
                .iter()
                .map(|&x| f64::from(x))
                .collect()
        };
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let a = row(anchor);
        let mut all: Vec<(f64, &str, usize)> = (0..n)
            .filter(|&j| j != anchor)
            .map(|j| {
                let v = row(j);
                let dot: f64 = a.iter().zip(&v).map(|(x, y)| x * y).sum();
                (dot / (norm(&a) * norm(&v)), ids[j].as_str(), j)
            })
            .collect();
        all.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(y.1)));
        let got = topk_retrieve(&index, &ids[anchor], k).map_err(|e| e.to_string())?;
        let want: Vec<usize> = all.iter().take(k).map(|x| x.2).collect();
        let got_rows: Vec<usize> = got.iter().map(|h| h.row).collect();
        check(got_rows == want, || {
            format!("retrieval index {t}: {got_rows:?} vs {want:?}")
        })?;
    }

    for t in 0..100 {
        let k = r.gen_range(1..=10);
        let n = r.gen_range(1..=1000);
        let gold: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
        let pred: Vec<usize> = gold
            .iter()
            .map(|&g| {
                if r.gen_bool(0.6) {
                    g
                } else {
                    r.gen_range(0..k)
                }
            })
            .collect();
        let mut cm = vec![vec![0usize; k]; k];
        for (&g, &p) in gold.iter().zip(&pred) {
            cm[g][p] += 1;
        }
        let mut sums = (0.0, 0.0, 0.0);
        let mut present = 0.0;
        for c in 0..k {
            let row: usize = cm[c].iter().sum();
            if row == 0 {
                continue;
            }
            present += 1.0;
            let col: usize = (0..k).map(|g| cm[g][c]).sum();
            let p = if col == 0 {
                0.0
            } else {
                cm[c][c] as f64 / col as f64
            };
            let rc = cm[c][c] as f64 / row as f64;
            sums.0 += p;
            sums.1 += rc;
            sums.2 += if p + rc == 0.0 {
                0.0
            } else {
                2.0 * p * rc / (p + rc)
            };
        }
        let acc = (0..k).map(|c| cm[c][c]).sum::<usize>() as f64 / n as f64;
        let rep =
            macro_metrics(&gold, &pred, k, Averaging::PresentInGold).map_err(|e| e.to_string())?;
        let diffs = [
            rep.acc - acc,
            rep.mp - sums.0 / present,
            rep.mr - sums.1 / present,
            rep.f1 - sums.2 / present,
        ];
        check(diffs.iter().all(|d| d.abs() <= 1e-12), || {
            format!("label set {t}: {diffs:?}")
        })?;
    }

    let mut worst: f64 = 0.0;
    for t in 0..100 {
        let k = r.gen_range(2..=6);
        let dim = r.gen_range(1..=8);
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for c in 0..k {
            let center: Vec<f64> = (0..dim).map(|_| r.gen_range(-10.0..10.0)).collect();
            for _ in 0..r.gen_range(1..=10) {
                points.push(
                    center
                        .iter()
                        .map(|x| x + r.gen_range(-3.0..3.0))
                        .collect::<Vec<f64>>(),
                );
                labels.push(c as u32 + 40);
            }
        }
        let selected: Vec<u32> = (0..k as u32).map(|c| c + 40).collect();
        let rep = dbi(&points, &labels, &selected).map_err(|e| e.to_string())?;
        let dist = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let members = |c: u32| -> Vec<&Vec<f64>> {
            points
                .iter()
                .zip(&labels)
                .filter(|p| *p.1 == c)
                .map(|p| p.0)
                .collect()
        };
        let mu: Vec<Vec<f64>> = selected
            .iter()
            .map(|&c| {
                let m = members(c);
                (0..dim)
                    .map(|d| m.iter().map(|p| p[d]).sum::<f64>() / m.len() as f64)
                    .collect()
            })
            .collect();
        let s: Vec<f64> = selected
            .iter()
            .zip(&mu)
            .map(|(&c, m)| {
                let pts = members(c);
                pts.iter().map(|p| dist(p, m)).sum::<f64>() / pts.len() as f64
            })
            .collect();
        for i in 0..k {
            let want = (0..k)
                .filter(|&j| j != i)
                .map(|j| (s[i] + s[j]) / dist(&mu[i], &mu[j]))
                .fold(f64::MIN, f64::max);
            let err = (rep.charges[i].dbi - want).abs();
            check(err <= 1e-9, || {
                format!(
                    "point set {t}, cluster {i}: {} vs {want}",
                    rep.charges[i].dbi
                )
            })?;
            worst = worst.max(err);
        }
    }
    Ok(format!(
        "200 retrievals, 100 metric sets, 100 DBI sets agree (max DBI error {worst:.1e})"
    ))
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn synthetic_end_to_end() -> Outcome {
    let config_path = synthetic_config();
    let cfg = RunConfig::load(Some(&config_path), &[]).map_err(|e| e.to_string())?;
    check(
        cfg.pretrain.epochs == 5
            && cfg.pretrain.temperature == 0.05
            && cfg.pretrain.batch_size == 32,
        || "synthetic config drifted from 5 epochs, tau 0.05, b 32".into(),
    )?;
    check(
        cfg.synth.clusters == 6 && cfg.synth.cases_per_cluster == 200,
        || "corpus size drifted".into(),
    )?;

    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let c = config_path.to_str().unwrap();
    let run = |cmd: &str, extra: &[&str]| -> Result<(), String> {
        let mut args = vec!["-c", c, "--workers", "1", cmd];
        args.extend_from_slice(extra);
        match duet(dir.path(), &args) {
            0 => Ok(()),
            code => Err(format!("`{cmd}` exited with {code}")),
        }
    };
    for cmd in [
        "synth-data",
        "ingest",
        "build-vocab",
        "mine-ldm",
        "embed",
        "mine-lcc",
        "pretrain",
    ] {
        run(cmd, &[])?;
    }
    let arm = |name: &str, init: &str| -> Result<(f64, f64), String> {
        let classifier = format!("paths.classifier=arms/{name}/classifier.duet");
        let predictions = format!("paths.predictions=arms/{name}/predictions.jsonl");
        let reports = format!("paths.reports=arms/{name}/reports");
        let init = format!("paths.finetune_init={init}");
        let o = [
            classifier.as_str(),
            predictions.as_str(),
            reports.as_str(),
            init.as_str(),
        ];
        run("finetune", &o)?;
        run("predict", &o)?;
        run("eval", &o)?;
        let mut with_task = o.to_vec();
        with_task.push("eval.entropy_tasks=[\"charges\"]");
        run("entropy", &with_task)?;
        let report = read_json(&dir.path().join(format!("arms/{name}/reports/eval.json")));
        let f1 = report
            .as_array()
            .unwrap()
            .iter()
            .find(|r| r["task"] == "charges")
            .unwrap()["f1"]
            .as_f64()
            .unwrap();
        let entropy = read_json(
            &dir.path()
                .join(format!("arms/{name}/reports/entropy-charges.json")),
        )["mean"]
            .as_f64()
            .unwrap();
        Ok((f1, entropy))
    };
    let (f1_a, h_a) = arm("baseline", "")?;
    let (f1_b, h_b) = arm("duet", "runs/synthetic/encoder.duet")?;
    run(
        "dbi",
        &[
            "paths.dbi_baseline=arms/baseline/classifier.duet",
            "paths.dbi_candidate=arms/duet/classifier.duet",
            "paths.reports=arms/compare",
        ],
    )?;
    let dbi = read_json(&dir.path().join("arms/compare/dbi.json"));
    let reductions: Vec<f64> = dbi["reductions"]
        .as_array()
        .unwrap()
        .iter()
        .map(|d| d["reduction"].as_f64().unwrap())
        .collect();
    let positive = reductions.iter().filter(|&&d| d > 0.0).count();
    let secs = start.elapsed().as_secs_f64();
    let summary = format!(
        "charge F1 {f1_a:.3} -> {f1_b:.3}, entropy {h_a:.3} -> {h_b:.3}, DBI reduction > 0 for {positive}/{} charges, {secs:.1}s",
        reductions.len()
    );
    check(f1_b >= f1_a, || format!("F1 fell: {summary}"))?;
    check(h_b <= h_a, || format!("entropy rose: {summary}"))?;
    check(reductions.len() == 6 && positive >= 4, || {
        format!("DBI: {summary}")
    })?;
    check(secs < 300.0, || format!("too slow: {summary}"))?;
    Ok(summary)
}

const PIPELINE: [&str; 13] = [
    "synth-data",
    "ingest",
    "build-vocab",
    "mine-ldm",
    "embed",
    "mine-lcc",
    "pretrain",
    "finetune",
    "predict",
    "eval",
    "entropy",
    "dbi",
    "export-embeddings",
];

fn determinism() -> Outcome {
    let config = synthetic_config();
    let c = config.to_str().unwrap();
    let run = || -> Result<Vec<(std::path::PathBuf, Vec<u8>)>, String> {
        let dir = tempfile::tempdir().unwrap();
        for cmd in PIPELINE {
            let code = duet(dir.path(), &["-c", c, cmd]);
            check(code == 0, || format!("`{cmd}` exited with {code}"))?;
        }
        Ok(snapshot(dir.path()))
    };
    let (a, b) = (run()?, run()?);
    check(a.len() == b.len(), || {
        format!("{} vs {} files", a.len(), b.len())
    })?;
    for ((pa, ba), (pb, bb)) in a.iter().zip(&b) {
        check(pa == pb && ba == bb, || {
            format!("{} differs between runs", pa.display())
        })?;
    }
    let checkpoints = a
        .iter()
        .filter(|(p, _)| p.extension().is_some_and(|e| e == "duet"))
        .count();
    Ok(format!(
        "{} files byte-identical across two runs, {checkpoints} of them checkpoints",
        a.len()
    ))
}

fn round_trips() -> Outcome {
    let synth = generate(&SynthConfig {
        cases_per_cluster: 10,
        ..SynthConfig::default()
    });
    let vocab = build_vocab(&synth.cases, &synth.catalog, 500);
    let dir = tempfile::tempdir().unwrap();
    let mut bytes_checked = 0;
    for share_heads in [true, false] {
        let enc = EncoderModel::init(EncoderConfig {
            vocab_size: vocab.len(),
            embed_dim: 8,
            proj_dim: 6,
            seed: 5,
            share_heads,
        })
        .unwrap();
        let mut clf = Classifier::new(enc, &Task::ALL, &synth.catalog).unwrap();
        let cases: Vec<EncodedCase> = synth
            .cases
            .iter()
            .map(|c| clf.encode_case(c, &vocab).unwrap())
            .collect();
        let ft = FinetuneConfig {
            epochs: 2,
            learning_rate: 0.01,
            batch_size: 8,
            ..FinetuneConfig::default()
        };
        duet::trainer::finetune(&mut clf, &cases, &ft).unwrap();

        let p = dir.path().join("enc.duet");
        save_checkpoint(&clf.encoder, &p).unwrap();
        let back = load_checkpoint(&p).unwrap();
        let bits = |m: &EncoderModel| -> Vec<u64> {
            m.blocks()
                .iter()
                .flat_map(|b| b.iter().map(|x| x.to_bits()))
                .collect()
        };
        check(bits(&back) == bits(&clf.encoder), || {
            "encoder parameters changed on reload".into()
        })?;
        let q = dir.path().join("enc2.duet");
        save_checkpoint(&back, &q).unwrap();
        check(
            std::fs::read(&p).unwrap() == std::fs::read(&q).unwrap(),
            || "re-saved encoder differs".into(),
        )?;

        let p = dir.path().join("clf.duet");
        clf.save(&p).unwrap();
        let back = Classifier::load(&p).unwrap();
        check(back == clf, || "classifier changed on reload".into())?;
        bytes_checked += std::fs::metadata(&p).unwrap().len();

        let (m, s) = (dir.path().join("e.bin"), dir.path().join("e.csv"));
        let exported = export_embeddings(&clf.encoder, &vocab, &synth.cases, &m, &s).unwrap();
        let imported = CorpusIndex::read(&m, &s).unwrap();
        let fresh = embed_corpus(&clf.encoder, &vocab, &synth.cases).unwrap();
        let fbits =
            |x: &CorpusIndex| -> Vec<u32> { x.matrix().iter().map(|v| v.to_bits()).collect() };
        check(
            fbits(&imported) == fbits(&exported) && fbits(&imported) == fbits(&fresh),
            || "embedding matrix changed on import".into(),
        )?;
        check(
            imported.case_ids == exported.case_ids && imported.labels == exported.labels,
            || "sidecar changed on import".into(),
        )?;
    }
    Ok(format!(
        "encoder, classifier ({bytes_checked} bytes) and embedding files reload bitwise"
    ))
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("gradient fidelity", gradient_fidelity),
        ("uniform-logit sanity", uniform_logits),
        ("pool invariants", pool_invariants),
        ("oracle equivalence", oracle_equivalence),
        ("synthetic end-to-end", synthetic_end_to_end),
        ("determinism", determinism),
        ("round trips", round_trips),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail}; {secs:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({detail}; {secs:.1}s)", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
