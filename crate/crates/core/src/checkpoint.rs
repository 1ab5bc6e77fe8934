//! Versioned binary container for named parameter groups, with a JSON
//! sidecar.
//!
//! Layout (all integers little-endian `u32`):
//! `b"CDIFFCKP"`, version, metadata length, compact JSON metadata, group
//! count, then per group its name, a frozen flag byte, tensor count and per
//! tensor its name, rank and dims; finally every tensor's `f32` data in
//! declaration order.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"CDIFFCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup {
    pub name: String,
    pub params: ParamSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    /// Architecture configuration, seed, step counter and similar.
    pub meta: Value,
    pub groups: Vec<ParamGroup>,
}

/// Sidecar path: the container path with a `.json` extension.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
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
            .ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("non-UTF-8 name in checkpoint".into()))
    }
}

impl Container {
    pub fn group(&self, name: &str) -> Result<&ParamGroup> {
        self.groups
            .iter()
            .find(|g| g.name == name)
            .ok_or_else(|| Error::Format(format!("checkpoint has no parameter group {name:?}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION as usize);
        let meta = serde_json::to_vec(&self.meta).expect("JSON value serializes");
        put_u32(&mut out, meta.len());
        out.extend_from_slice(&meta);
        put_u32(&mut out, self.groups.len());
        for g in &self.groups {
            put_str(&mut out, &g.name);
            out.push(g.params.is_frozen() as u8);
            put_u32(&mut out, g.params.len());
            for spec in g.params.specs() {
                put_str(&mut out, &spec.name);
                put_u32(&mut out, spec.shape.len());
                for &d in &spec.shape {
                    put_u32(&mut out, d);
                }
            }
        }
        for g in &self.groups {
            for t in g.params.tensors() {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION as usize {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let meta_len = r.u32()?;
        let meta: Value = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
        let n_groups = r.u32()?;
        let mut headers = Vec::with_capacity(n_groups);
        for _ in 0..n_groups {
            let name = r.string()?;
            let frozen = r.take(1)?[0] != 0;
            let n_tensors = r.u32()?;
            let mut tensors = Vec::with_capacity(n_tensors);
            for _ in 0..n_tensors {
                let tname = r.string()?;
                let rank = r.u32()?;
                let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
                tensors.push((tname, shape));
            }
            headers.push((name, frozen, tensors));
        }
        let mut groups = Vec::with_capacity(n_groups);
        for (name, frozen, tensors) in headers {
            let mut entries = Vec::with_capacity(tensors.len());
            for (tname, shape) in tensors {
                let n: usize = shape.iter().product();
                let raw = r.take(
                    n.checked_mul(4)
                        .ok_or_else(|| Error::Format("tensor too large".into()))?,
                )?;
                let data = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                entries.push((tname, Tensor::new(shape, data)?));
            }
            let mut params = ParamSet::new(entries);
            params.set_frozen(frozen);
            groups.push(ParamGroup { name, params });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint data".into()));
        }
        Ok(Self { meta, groups })
    }

    /// Writes the container and its pretty-printed JSON sidecar.
    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))?;
        let side = sidecar_path(path);
        let text = serde_json::to_string_pretty(&self.meta).expect("JSON value serializes") + "\n";
        fs::write(&side, text).map_err(|e| Error::io(&side, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
