//! Binary checkpoint container, format version 1.
//!
//! All integers little-endian:
//!
//! ```text
//! magic      4 bytes  "SPCK"
//! version    u32      1
//! dims       5 x u32  d_model, n_heads, n_layers, ffn_dim, vocab_size
//! step       u64      completed updates
//! n_tensors  u32
//! flags      u32      bit 0: optimizer moments follow the tensors
//! adam_t     u64      optimizer step counter (0 without moments)
//! tensor*    u16 name length, UTF-8 name, u32 rows, u32 cols, rows*cols f64
//! moments?   per tensor: rows*cols f64 first moment, then second moment
//! checksum   u64      FNV-1a 64 over every preceding byte
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::model::ModelDims;
use super::Trainer;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SPCK";
pub const VERSION: u32 = 1;
const FLAG_OPTIMIZER: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub value: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub t: u64,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub dims: ModelDims,
    pub step: u64,
    pub tensors: Vec<NamedTensor>,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer, with_optimizer: bool) -> Self {
        Checkpoint {
            dims: trainer.model.dims(),
            step: trainer.step(),
            tensors: trainer
                .model
                .params
                .params
                .iter()
                .map(|p| NamedTensor {
                    name: p.name.clone(),
                    value: p.value.clone(),
                })
                .collect(),
            optimizer: with_optimizer.then(|| OptimizerState {
                t: trainer.adam.t,
                m: trainer.adam.m.clone(),
                v: trainer.adam.v.clone(),
            }),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for d in [
            self.dims.d_model,
            self.dims.n_heads,
            self.dims.n_layers,
            self.dims.ffn_dim,
            self.dims.vocab_size,
        ] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let flags = if self.optimizer.is_some() { FLAG_OPTIMIZER } else { 0 };
        out.extend_from_slice(&flags.to_le_bytes());
        let t = self.optimizer.as_ref().map_or(0, |o| o.t);
        out.extend_from_slice(&t.to_le_bytes());
        for tensor in &self.tensors {
            let name = tensor.name.as_bytes();
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name);
            let (r, c) = tensor.value.dim();
            out.extend_from_slice(&(r as u32).to_le_bytes());
            out.extend_from_slice(&(c as u32).to_le_bytes());
            write_values(&mut out, &tensor.value);
        }
        if let Some(opt) = &self.optimizer {
            for (m, v) in opt.m.iter().zip(&opt.v) {
                write_values(&mut out, m);
                write_values(&mut out, v);
            }
        }
        let sum = fnv1a(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        if fnv1a(body) != stored {
            return Err(Error::Checkpoint("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut d = [0usize; 5];
        for x in &mut d {
            *x = r.u32()? as usize;
        }
        let dims = ModelDims {
            d_model: d[0],
            n_heads: d[1],
            n_layers: d[2],
            ffn_dim: d[3],
            vocab_size: d[4],
        };
        let step = r.u64()?;
        let n = r.u32()? as usize;
        let flags = r.u32()?;
        if flags & !FLAG_OPTIMIZER != 0 {
            return Err(Error::Checkpoint(format!("unknown flags {flags:#x}")));
        }
        let t = r.u64()?;
        let mut tensors = Vec::new();
        for _ in 0..n {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let value = r.matrix(rows, cols)?;
            tensors.push(NamedTensor { name, value });
        }
        let optimizer = if flags & FLAG_OPTIMIZER != 0 {
            let mut m = Vec::with_capacity(tensors.len());
            let mut v = Vec::with_capacity(tensors.len());
            for tensor in &tensors {
                let (rows, cols) = tensor.value.dim();
                m.push(r.matrix(rows, cols)?);
                v.push(r.matrix(rows, cols)?);
            }
            Some(OptimizerState { t, m, v })
        } else {
            None
        };
        if r.pos != body.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                body.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            dims,
            step,
            tensors,
            optimizer,
        })
    }
}

fn write_values(out: &mut Vec<u8>, m: &Array2<f64>) {
    for v in m.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("unexpected end of data at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Checkpoint("tensor size overflows".into()))?;
        let bytes = self.take(
            count
                .checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("tensor size overflows".into()))?,
        )?;
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint("non-finite tensor value".into()));
        }
        Array2::from_shape_vec((rows, cols), values)
            .map_err(|e| Error::Checkpoint(format!("bad tensor shape: {e}")))
    }
}
