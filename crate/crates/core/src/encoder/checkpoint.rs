//! Binary checkpoint container.
//!
//! ```text
//! "DUET"                      magic
//! u32 version                 FORMAT_VERSION
//! u32 vocab_size, u32 embed_dim, u32 proj_dim, u64 seed, u8 share_heads
//! u32 tensor_count
//! per tensor:
//!   u32 name_len, name (UTF-8)
//!   u32 ndim, u32 dims[ndim]
//!   f32 data[prod(dims)]
//! ```
//!
//! All integers and floats are little-endian. Trailing bytes are rejected.

use std::io::Write;
use std::path::Path;

use super::{EncoderConfig, EncoderModel, Linear};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DUET";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn from_f64(name: &str, shape: Vec<usize>, data: &[f64]) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            name: name.to_string(),
            shape,
            data: data.iter().map(|&x| x as f32).collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&x| f64::from(x)).collect()
    }
}

/// Encoder configuration plus named tensors. Classifier checkpoints carry
/// extra `head.*` tensors after the encoder's own.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: EncoderConfig,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    fn require(&self, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
        let t = self
            .tensor(name)
            .ok_or_else(|| Error::Corrupt(format!("checkpoint lacks tensor {name}")))?;
        if t.shape != shape {
            return Err(Error::Corrupt(format!(
                "tensor {name} has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        Ok(t.to_f64())
    }

    pub fn from_encoder(model: &EncoderModel) -> Self {
        let c = *model.config();
        let mut tensors = vec![NamedTensor::from_f64(
            "embedding",
            vec![c.vocab_size, c.embed_dim],
            &model.embedding,
        )];
        let mut push_linear = |prefix: &str, l: &Linear| {
            tensors.push(NamedTensor::from_f64(
                &format!("{prefix}.weight"),
                vec![l.in_dim, l.out_dim],
                &l.weight,
            ));
            tensors.push(NamedTensor::from_f64(
                &format!("{prefix}.bias"),
                vec![l.out_dim],
                &l.bias,
            ));
        };
        push_linear("fact", &model.fact);
        if let Some(d) = &model.decision {
            push_linear("decision", d);
        }
        Self { config: c, tensors }
    }

    pub fn encoder(&self) -> Result<EncoderModel> {
        let c = self.config;
        c.validate()?;
        let linear = |prefix: &str| -> Result<Linear> {
            Ok(Linear {
                in_dim: c.embed_dim,
                out_dim: c.proj_dim,
                weight: self.require(&format!("{prefix}.weight"), &[c.embed_dim, c.proj_dim])?,
                bias: self.require(&format!("{prefix}.bias"), &[c.proj_dim])?,
            })
        };
        let embedding = self.require("embedding", &[c.vocab_size, c.embed_dim])?;
        let fact = linear("fact")?;
        let decision = if c.share_heads {
            None
        } else {
            Some(linear("decision")?)
        };
        EncoderModel::from_parts(c, embedding, fact, decision)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let c = &self.config;
        for dim in [c.vocab_size, c.embed_dim, c.proj_dim] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        out.extend_from_slice(&c.seed.to_le_bytes());
        out.push(u8::from(c.share_heads));
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Version("missing DUET magic bytes".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Version(format!(
                "format version {version}, this build reads {FORMAT_VERSION}"
            )));
        }
        let vocab_size = r.u32()? as usize;
        let embed_dim = r.u32()? as usize;
        let proj_dim = r.u32()? as usize;
        let seed = r.u64()?;
        let share_heads = match r.take(1)?[0] {
            0 => false,
            1 => true,
            b => return Err(Error::Corrupt(format!("share_heads flag {b}"))),
        };
        let config = EncoderConfig {
            vocab_size,
            embed_dim,
            proj_dim,
            seed,
            share_heads,
        };
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Corrupt("tensor name is not UTF-8".into()))?
                .to_string();
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Corrupt(format!("tensor {name} shape overflows")))?;
            let raw = r.take(
                numel
                    .checked_mul(4)
                    .ok_or_else(|| Error::Corrupt(format!("tensor {name} shape overflows")))?,
            )?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Corrupt(format!(
                "{} trailing bytes after last tensor",
                bytes.len() - r.pos
            )));
        }
        Ok(Self { config, tensors })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Corrupt(format!(
                    "truncated: needed {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}

pub fn write_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = checkpoint.to_bytes();
    crate::fsio::write_atomic(path, |w: &mut dyn Write| w.write_all(&bytes))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

pub fn save_checkpoint(model: &EncoderModel, path: &Path) -> Result<()> {
    write_checkpoint(&Checkpoint::from_encoder(model), path)
}

/// Loads the encoder part of any checkpoint, ignoring extra tensors.
pub fn load_checkpoint(path: &Path) -> Result<EncoderModel> {
    read_checkpoint(path)?.encoder()
}
