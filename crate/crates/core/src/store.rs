//! Named parameter tensors and their binary container.
//!
//! Container layout: magic `LWNN`, u16 version, u32 entry count, then per
//! entry a length-prefixed UTF-8 name, a u32 extent count, the extents as
//! u32 little-endian, and the data as 32-bit little-endian IEEE reals in
//! row-major order.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

pub const WEIGHT_MAGIC: &[u8; 4] = b"LWNN";
pub const WEIGHT_VERSION: u16 = 1;

/// Named parameter tensors shared by every decomposition level.
#[derive(Debug, Default, Clone)]
pub struct WeightStore {
    entries: BTreeMap<String, Tensor>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    /// Fetch a tensor that must exist; absence is a configuration error.
    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::config(format!("unknown operator parameter '{name}'")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count over all entries.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(|t| t.len()).sum()
    }

    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHT_MAGIC);
        out.extend_from_slice(&WEIGHT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &e in t.shape() {
                out.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let magic = cur.take(4)?;
        if magic != WEIGHT_MAGIC {
            return Err(cur.err("bad magic, expected LWNN"));
        }
        let version = cur.u16()?;
        if version != WEIGHT_VERSION {
            return Err(cur.err(format!("unsupported weight container version {version}")));
        }
        let count = cur.u32()? as usize;
        let mut store = WeightStore::new();
        for _ in 0..count {
            let name_len = cur.u32()? as usize;
            if name_len > 4096 {
                return Err(cur.err("unreasonable name length"));
            }
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| cur.err("name is not valid UTF-8"))?;
            let ndim = cur.u32()? as usize;
            if ndim == 0 || ndim > 8 {
                return Err(cur.err("unreasonable extent count"));
            }
            let mut shape = Vec::with_capacity(ndim);
            let mut len = 1usize;
            for _ in 0..ndim {
                let e = cur.u32()? as usize;
                len = len
                    .checked_mul(e)
                    .ok_or_else(|| cur.err("extent overflow"))?;
                shape.push(e);
            }
            if len > (1 << 28) {
                return Err(cur.err("tensor too large"));
            }
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                data.push(cur.f32()? as f64);
            }
            store.insert(name, Tensor::from_vec(&shape, data).unwrap());
        }
        Ok(store)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.serialize())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::deserialize(&std::fs::read(path)?)
    }
}

/// SHA-256 over the serialized container bytes; identifies the exact model.
pub fn digest_bytes(container: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(container);
    h.finalize().into()
}

/// One gradient tensor per named parameter; accumulation is elementwise.
#[derive(Debug, Default)]
pub struct GradStore {
    entries: BTreeMap<String, Tensor>,
}

impl GradStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn accumulate(&mut self, name: &str, grad: &Tensor) {
        match self.entries.get_mut(name) {
            Some(t) => t.add_assign(grad),
            None => {
                self.entries.insert(name.to_string(), grad.clone());
            }
        }
    }

    pub fn accumulate_scalar(&mut self, name: &str, grad: f64) {
        match self.entries.get_mut(name) {
            Some(t) => t.data_mut()[0] += grad,
            None => {
                self.entries
                    .insert(name.to_string(), Tensor::from_vec(&[1], vec![grad]).unwrap());
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Merge another gradient accumulation into this one (fixed order).
    pub fn merge(&mut self, other: &GradStore) {
        for (name, g) in other.iter() {
            self.accumulate(name, g);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.entries.values_mut() {
            t.scale(s);
        }
    }

    /// Drop gradients for parameters matching the predicate (freeze masks).
    pub fn retain(&mut self, keep: impl Fn(&str) -> bool) {
        self.entries.retain(|name, _| keep(name));
    }

    /// Verify every gradient shape matches its parameter.
    pub fn check_shapes(&self, params: &WeightStore) -> Result<()> {
        for (name, g) in &self.entries {
            let p = params.require(name)?;
            if p.shape() != g.shape() {
                return Err(Error::config(format!(
                    "gradient shape {:?} does not match parameter '{name}' {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Bounds-checked little-endian reader used by all container parsers.
pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos,
            msg: msg.into(),
        }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Format {
                offset: self.pos,
                msg: format!("unexpected end of data (need {n} bytes)"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    /// Non-consuming 4-byte read.
    pub fn peek4(&self) -> Result<[u8; 4]> {
        if self.remaining() < 4 {
            return Err(Error::Format {
                offset: self.pos,
                msg: "unexpected end of data (need 4 bytes)".into(),
            });
        }
        Ok(self.bytes[self.pos..self.pos + 4].try_into().unwrap())
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
