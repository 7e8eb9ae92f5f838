//! Single-file tensor container.
//!
//! Layout: the 8-byte magic `EAMRI\0\0\x01`, a little-endian `u32` format
//! version, a little-endian `u64` header length, the JSON header, then the
//! raw little-endian `f64` payload of every tensor in header order. Complex
//! tensors (`dtype = "c128"`) store interleaved `(re, im)` pairs.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::tensor::{ComplexTensor, RealTensor};

pub const MAGIC: [u8; 8] = *b"EAMRI\0\0\x01";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F64,
    C128,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Entry {
    name: String,
    dtype: Dtype,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    #[serde(default)]
    config: Value,
    #[serde(default)]
    meta: Value,
    tensors: Vec<Entry>,
}

/// A named collection of tensors plus free-form JSON metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    /// What the file holds (`"dataset"`, `"checkpoint"`, ...).
    pub kind: String,
    pub config: Value,
    pub meta: Value,
    entries: Vec<(Entry, Vec<f64>)>,
}

impl Container {
    pub fn new(kind: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            config: Value::Null,
            meta: Value::Null,
            entries: Vec::new(),
        }
    }

    fn push(&mut self, name: String, dtype: Dtype, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        if self.entries.iter().any(|(e, _)| e.name == name) {
            return Err(Error::arg(format!("duplicate tensor name `{name}`")));
        }
        self.entries.push((Entry { name, dtype, shape }, data));
        Ok(())
    }

    pub fn insert_real(&mut self, name: impl Into<String>, t: &RealTensor) -> Result<()> {
        self.push(name.into(), Dtype::F64, t.shape().to_vec(), t.data().to_vec())
    }

    pub fn insert_complex(&mut self, name: impl Into<String>, t: &ComplexTensor) -> Result<()> {
        self.push(name.into(), Dtype::C128, t.shape().to_vec(), t.data().to_vec())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(e, _)| e.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn entry(&self, name: &str, dtype: Dtype) -> Result<&(Entry, Vec<f64>)> {
        let found = self
            .entries
            .iter()
            .find(|(e, _)| e.name == name)
            .ok_or_else(|| Error::format(name, "tensor is missing"))?;
        if found.0.dtype != dtype {
            return Err(Error::format(name, format!("expected dtype {dtype:?}, found {:?}", found.0.dtype)));
        }
        Ok(found)
    }

    pub fn real(&self, name: &str) -> Result<RealTensor> {
        let (e, d) = self.entry(name, Dtype::F64)?;
        RealTensor::new(e.shape.clone(), d.clone()).map_err(|err| Error::format(name, err.to_string()))
    }

    pub fn complex(&self, name: &str) -> Result<ComplexTensor> {
        let (e, d) = self.entry(name, Dtype::C128)?;
        ComplexTensor::new(e.shape.clone(), d.clone()).map_err(|err| Error::format(name, err.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind.clone(),
            config: self.config.clone(),
            meta: self.meta.clone(),
            tensors: self.entries.iter().map(|(e, _)| e.clone()).collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let payload: usize = self.entries.iter().map(|(_, d)| d.len() * 8).sum();
        let mut out = Vec::with_capacity(20 + json.len() + payload);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, d) in &self.entries {
            for v in d {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut take = |n: usize, field: &str| -> Result<&[u8]> {
            if r.len() < n {
                return Err(Error::format(field, format!("file truncated: need {n} bytes, {} left", r.len())));
            }
            let (head, rest) = r.split_at(n);
            r = rest;
            Ok(head)
        };
        if take(8, "magic")? != MAGIC {
            return Err(Error::format("magic", "not an EAMRI container"));
        }
        let version = u32::from_le_bytes(take(4, "version")?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::format("version", format!("unsupported version {version}")));
        }
        let len = u64::from_le_bytes(take(8, "header_length")?.try_into().expect("8 bytes")) as usize;
        let header: Header = serde_json::from_slice(take(len, "header")?)
            .map_err(|e| Error::format("header", e.to_string()))?;
        let mut entries = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let scalars = e.shape.iter().product::<usize>() * if e.dtype == Dtype::C128 { 2 } else { 1 };
            let raw = take(scalars * 8, &e.name)?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::format(&e.name, "payload holds non-finite values"));
            }
            entries.push((e, data));
        }
        if !r.is_empty() {
            return Err(Error::format("payload", format!("{} trailing bytes", r.len())));
        }
        Ok(Self {
            kind: header.kind,
            config: header.config,
            meta: header.meta,
            entries,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Errors unless the container holds `kind`.
    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::format("kind", format!("expected a {kind}, found a {}", self.kind)));
        }
        Ok(())
    }
}
