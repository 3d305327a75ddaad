//! Binary checkpoint format for named parameters and auxiliary state.
//!
//! Layout: magic "LNCK", u32 version, u32 entry count, then per entry a
//! length-prefixed UTF-8 name, a type tag (0 = f32 tensor with shape,
//! 1 = u64 words), and the payload. A FNV-1a 64 checksum of everything
//! before it closes the file. All integers little-endian.

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::num::{real, Real};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"LNCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Entry {
    Floats { shape: Vec<usize>, data: Vec<f32> },
    Words(Vec<u64>),
}

impl Entry {
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Self {
        Entry::Floats {
            shape: t.shape.clone(),
            data: t.data.iter().map(|v| v.to_f64_lossy() as f32).collect(),
        }
    }

    pub fn to_tensor<T: Real>(&self) -> Result<Tensor<T>> {
        match self {
            Entry::Floats { shape, data } => {
                Tensor::from_vec(shape, data.iter().map(|&v| real(v as f64)).collect())
            }
            Entry::Words(_) => Err(Error::format("checkpoint", "entry is not a tensor")),
        }
    }

    pub fn words(&self) -> Result<&[u64]> {
        match self {
            Entry::Words(w) => Ok(w),
            Entry::Floats { .. } => Err(Error::format("checkpoint", "entry is not words")),
        }
    }
}

/// An ordered collection of named entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, Entry)>,
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

impl Checkpoint {
    pub fn push_tensor<T: Real>(&mut self, name: &str, t: &Tensor<T>) {
        self.entries.push((name.to_string(), Entry::from_tensor(t)));
    }

    pub fn push_words(&mut self, name: &str, words: Vec<u64>) {
        self.entries.push((name.to_string(), Entry::Words(words)));
    }

    pub fn get(&self, name: &str) -> Result<&Entry> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, e)| e)
            .ok_or_else(|| Error::format("checkpoint", format!("missing entry {name:?}")))
    }

    pub fn tensor<T: Real>(&self, name: &str) -> Result<Tensor<T>> {
        self.get(name)?.to_tensor()
    }

    pub fn by_name(&self) -> BTreeMap<&str, &Entry> {
        self.entries.iter().map(|(n, e)| (n.as_str(), e)).collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, entry) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match entry {
                Entry::Floats { shape, data } => {
                    out.push(0u8);
                    out.push(shape.len() as u8);
                    for &d in shape {
                        out.extend_from_slice(&(d as u32).to_le_bytes());
                    }
                    for &v in data {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Entry::Words(words) => {
                    out.push(1u8);
                    out.extend_from_slice(&(words.len() as u32).to_le_bytes());
                    for &w in words {
                        out.extend_from_slice(&w.to_le_bytes());
                    }
                }
            }
        }
        let checksum = fnv1a64(&out);
        out.extend_from_slice(&checksum.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 {
            return Err(Error::format("checkpoint", "truncated"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().unwrap());
        if fnv1a64(body) != stored {
            return Err(Error::format("checkpoint", "checksum mismatch"));
        }
        let mut r = body;
        let mut take = |n: usize| -> Result<&[u8]> {
            if r.len() < n {
                return Err(Error::format("checkpoint", "truncated"));
            }
            let (head, rest) = r.split_at(n);
            r = rest;
            Ok(head)
        };
        if take(4)? != MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::format("checkpoint", format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(take(4)?.try_into().unwrap());
        let mut entries = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name_len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(name_len)?.to_vec())
                .map_err(|e| Error::format("checkpoint", e.to_string()))?;
            let tag = take(1)?[0];
            let entry = match tag {
                0 => {
                    let ndim = take(1)?[0] as usize;
                    let mut shape = Vec::with_capacity(ndim);
                    for _ in 0..ndim {
                        shape.push(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize);
                    }
                    let n: usize = shape.iter().product();
                    let raw = take(4 * n)?;
                    let data = raw
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    Entry::Floats { shape, data }
                }
                1 => {
                    let n = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
                    let raw = take(8 * n)?;
                    Entry::Words(
                        raw.chunks_exact(8)
                            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                            .collect(),
                    )
                }
                other => {
                    return Err(Error::format("checkpoint", format!("unknown entry tag {other}")))
                }
            };
            entries.push((name, entry));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(&self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::decode(&bytes)
    }
}
