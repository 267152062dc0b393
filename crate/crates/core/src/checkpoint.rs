//! Binary parameter checkpoints.
//!
//! Layout: the magic bytes `YNCKPT1\0`, then a parameter section and an
//! optimizer section. Each section starts with a `u32` entry count followed
//! by entries of the form
//!
//! ```text
//! name_len: u32 | name: utf-8 | rank: u32 | extents: u32 × rank | values: f32 × prod(extents)
//! ```
//!
//! All integers and floats are little-endian. The optimizer section holds,
//! for every parameter `p`, the entries `p.m`, `p.v` and `p.step` (a single
//! value holding the step counter).

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Parameter, Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"YNCKPT1\0";

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

fn write_section(out: &mut Vec<u8>, entries: &[Entry]) {
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
        for &d in &e.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &e.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn section(&mut self) -> Result<Vec<Entry>> {
        let count = self.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let len = self.u32()? as usize;
            let name = String::from_utf8(self.take(len)?.to_vec())
                .map_err(|_| Error::Checkpoint("parameter name is not utf-8".into()))?;
            let rank = self.u32()? as usize;
            let shape = (0..rank)
                .map(|_| self.u32().map(|v| v as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let values = self
                .take(4 * n)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.push(Entry { name, shape, values });
        }
        Ok(entries)
    }
}

/// Parsed checkpoint contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: Vec<Entry>,
    pub optimizer: Vec<Entry>,
}

impl Checkpoint {
    pub fn from_params<T: Scalar>(params: &[&Parameter<T>]) -> Self {
        let to_f32 = |t: &Tensor<T>| t.data().iter().map(|v| v.as_f64() as f32).collect();
        let mut p_entries = Vec::new();
        let mut o_entries = Vec::new();
        for p in params {
            p_entries.push(Entry {
                name: p.name.clone(),
                shape: p.shape().to_vec(),
                values: to_f32(&p.value),
            });
            o_entries.push(Entry {
                name: format!("{}.m", p.name),
                shape: p.shape().to_vec(),
                values: to_f32(&p.first_moment),
            });
            o_entries.push(Entry {
                name: format!("{}.v", p.name),
                shape: p.shape().to_vec(),
                values: to_f32(&p.second_moment),
            });
            o_entries.push(Entry {
                name: format!("{}.step", p.name),
                shape: vec![1],
                values: vec![p.step as f32],
            });
        }
        Checkpoint {
            params: p_entries,
            optimizer: o_entries,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        write_section(&mut out, &self.params);
        write_section(&mut out, &self.optimizer);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let mut cur = Cursor {
            buf,
            pos: MAGIC.len(),
        };
        let params = cur.section()?;
        let optimizer = cur.section()?;
        if cur.pos != buf.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                buf.len() - cur.pos
            )));
        }
        Ok(Checkpoint { params, optimizer })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    /// Copies stored values (and optimizer state when present) into `params`,
    /// matching by name and shape.
    pub fn restore<T: Scalar>(&self, params: &mut [&mut Parameter<T>]) -> Result<()> {
        if self.params.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, model has {}",
                self.params.len(),
                params.len()
            )));
        }
        let find = |name: &str| self.optimizer.iter().find(|e| e.name == name);
        let load = |e: &Entry| -> Tensor<T> {
            Tensor::from_vec(&e.shape, e.values.iter().map(|&v| T::from_f64(v as f64)).collect())
                .expect("entry length checked at parse time")
        };
        for p in params.iter_mut() {
            let e = self
                .params
                .iter()
                .find(|e| e.name == p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {}", p.name)))?;
            if e.shape != p.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?} in checkpoint, {:?} in model",
                    p.name,
                    e.shape,
                    p.shape()
                )));
            }
            p.value = load(e);
            if let (Some(m), Some(v), Some(s)) = (
                find(&format!("{}.m", p.name)),
                find(&format!("{}.v", p.name)),
                find(&format!("{}.step", p.name)),
            ) {
                p.first_moment = load(m);
                p.second_moment = load(v);
                p.step = s.values.first().copied().unwrap_or(0.0) as u64;
            }
        }
        Ok(())
    }
}
