//! Dense case index and its on-disk form.
//!
//! Matrix file: `u64 n`, `u64 dim`, then `n × dim` little-endian `f32`,
//! row-major. Row labels travel in a CSV sidecar with header
//! `case_id,article_id,charge_id`, one row per matrix row.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{LegalCase, Vocabulary};
use crate::encoder::{EncoderModel, Head};
use crate::error::{Error, Result};

/// Row-aligned case ids, labels, and embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusIndex {
    pub case_ids: Vec<String>,
    pub labels: Vec<(u32, u32)>,
    dim: usize,
    rows: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SidecarRow {
    pub case_id: String,
    pub article_id: u32,
    pub charge_id: u32,
}

impl CorpusIndex {
    pub fn new(
        case_ids: Vec<String>,
        labels: Vec<(u32, u32)>,
        dim: usize,
        rows: Vec<f32>,
    ) -> Result<Self> {
        if case_ids.len() != labels.len() || rows.len() != case_ids.len() * dim {
            return Err(Error::Shape {
                expected: format!("{} rows of {dim}", case_ids.len()),
                actual: format!("{} labels, {} values", labels.len(), rows.len()),
            });
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = case_ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::invalid(format!("duplicate case id {dup} in index")));
        }
        Ok(Self {
            case_ids,
            labels,
            dim,
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.case_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.case_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn matrix(&self) -> &[f32] {
        &self.rows
    }

    pub fn position(&self, case_id: &str) -> Option<usize> {
        self.case_ids.iter().position(|id| id == case_id)
    }

    pub fn sidecar(&self) -> Vec<SidecarRow> {
        self.case_ids
            .iter()
            .zip(&self.labels)
            .map(|(id, &(a, c))| SidecarRow {
                case_id: id.clone(),
                article_id: a,
                charge_id: c,
            })
            .collect()
    }

    pub fn write(&self, matrix_path: &Path, sidecar_path: &Path) -> Result<()> {
        write_matrix(matrix_path, self.len(), self.dim, &self.rows)?;
        write_sidecar(sidecar_path, &self.sidecar())
    }

    /// Imports an externally produced or previously exported index.
    pub fn read(matrix_path: &Path, sidecar_path: &Path) -> Result<Self> {
        let (n, dim, rows) = read_matrix(matrix_path)?;
        let sidecar = read_sidecar(sidecar_path)?;
        if sidecar.len() != n {
            return Err(Error::Shape {
                expected: format!("{n} sidecar rows"),
                actual: format!("{}", sidecar.len()),
            });
        }
        let (ids, labels) = sidecar
            .into_iter()
            .map(|r| (r.case_id, (r.article_id, r.charge_id)))
            .unzip();
        Self::new(ids, labels, dim, rows)
    }
}

/// Encodes every case's fact with the fact head, in input order.
pub fn embed_corpus(
    model: &EncoderModel,
    vocab: &Vocabulary,
    cases: &[LegalCase],
) -> Result<CorpusIndex> {
    if vocab.len() > model.config().vocab_size {
        return Err(Error::invalid(format!(
            "vocabulary has {} tokens but the encoder only {}",
            vocab.len(),
            model.config().vocab_size
        )));
    }
    let rows: Vec<Vec<f32>> = cases
        .par_iter()
        .map(|c| {
            let h = model.encode(&vocab.tokenize(&c.fact_text), Head::Fact)?;
            Ok(h.0.iter().map(|&x| x as f32).collect())
        })
        .collect::<Result<_>>()?;
    CorpusIndex::new(
        cases.iter().map(|c| c.case_id.clone()).collect(),
        cases.iter().map(LegalCase::label_pair).collect(),
        model.proj_dim(),
        rows.concat(),
    )
}

pub fn write_matrix(path: &Path, n: usize, dim: usize, rows: &[f32]) -> Result<()> {
    assert_eq!(rows.len(), n * dim);
    crate::fsio::write_atomic(path, |w: &mut dyn Write| {
        w.write_all(&(n as u64).to_le_bytes())?;
        w.write_all(&(dim as u64).to_le_bytes())?;
        for x in rows {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    })
}

pub fn read_matrix(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 {
        return Err(Error::Corrupt(format!(
            "{}: matrix header truncated",
            path.display()
        )));
    }
    let n = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let dim = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let expected = n
        .checked_mul(dim)
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(16));
    if expected != Some(bytes.len()) {
        return Err(Error::Corrupt(format!(
            "{}: header says {n}×{dim} but file has {} bytes",
            path.display(),
            bytes.len()
        )));
    }
    let rows = bytes[16..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok((n, dim, rows))
}

pub fn write_sidecar(path: &Path, rows: &[SidecarRow]) -> Result<()> {
    crate::fsio::write_atomic(path, |w: &mut dyn Write| {
        let mut csv = csv::Writer::from_writer(w);
        if rows.is_empty() {
            csv.write_record(["case_id", "article_id", "charge_id"])?;
        }
        for r in rows {
            csv.serialize(r)?;
        }
        csv.flush()
    })
}

pub fn read_sidecar(path: &Path) -> Result<Vec<SidecarRow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}
