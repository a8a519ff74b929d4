//! Binary checkpoint format.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! magic   6 bytes   "LFSAL1"
//! repeated until end of file, one record per tensor, sorted by name:
//!   u32        name length in bytes
//!   [u8]       UTF-8 name
//!   u32        ndim
//!   u64 × ndim dims
//!   f64 × Π dims  values, row-major
//! ```
//!
//! A parameter `p` is stored as two records, `p.weight` and `p.bias`.
//! Optimizer velocities are not stored.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"LFSAL1";
const MAX_NDIM: u32 = 8;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_params(params: &ParamSet) -> Self {
        let mut ck = Self::new();
        ck.add_params(params);
        ck
    }

    pub fn add_params(&mut self, params: &ParamSet) {
        for (name, p) in params.iter() {
            self.tensors.insert(format!("{name}.weight"), p.weight.clone());
            self.tensors.insert(format!("{name}.bias"), p.bias.clone());
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Rebuilds the parameters whose names start with `prefix`.
    pub fn params(&self, prefix: &str) -> Result<ParamSet> {
        let mut out = ParamSet::new();
        for (name, w) in &self.tensors {
            let Some(base) = name.strip_suffix(".weight") else {
                continue;
            };
            if !base.starts_with(prefix) {
                continue;
            }
            let b = self
                .tensors
                .get(&format!("{base}.bias"))
                .ok_or_else(|| Error::Format(format!("checkpoint has {name} but no bias")))?;
            out.insert(base, w.clone(), b.clone())?;
        }
        Ok(out)
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        for (name, t) in &self.tensors {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(t.len() * 8);
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write_to(&mut v).expect("writing to a Vec cannot fail");
        v
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let mut tensors = BTreeMap::new();
        while r.pos < bytes.len() {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let ndim = r.u32()?;
            if ndim == 0 || ndim > MAX_NDIM {
                return Err(Error::Format(format!("tensor {name} has ndim {ndim}")));
            }
            let mut shape = Vec::with_capacity(ndim as usize);
            for _ in 0..ndim {
                shape.push(usize::try_from(r.u64()?).map_err(|_| Error::Format("dim overflow".into()))?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= bytes.len() - r.pos))
                .ok_or_else(|| Error::Format(format!("tensor {name} is truncated")))?;
            let raw = r.take(n * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))?;
            if tensors.insert(name.clone(), t).is_some() {
                return Err(Error::Format(format!("duplicate tensor {name}")));
            }
        }
        Ok(Self { tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
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
            .ok_or_else(|| Error::Format("checkpoint ends mid-record".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut p = ParamSet::new();
        p.insert(
            "fee.L5",
            Tensor::new(vec![1, 2, 1, 1], vec![0.5, -1.25]).unwrap(),
            Tensor::new(vec![1], vec![3.0]).unwrap(),
        )
        .unwrap();
        Checkpoint::from_params(&p)
    }

    #[test]
    fn byte_layout_is_exact() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..6], b"LFSAL1");
        // first record is "fee.L5.bias" (sorted before ".weight")
        assert_eq!(&bytes[6..10], &11u32.to_le_bytes());
        assert_eq!(&bytes[10..21], b"fee.L5.bias");
        assert_eq!(&bytes[21..25], &1u32.to_le_bytes());
        assert_eq!(&bytes[25..33], &1u64.to_le_bytes());
        assert_eq!(&bytes[33..41], &3.0f64.to_le_bytes());
        let weight_record = 4 + 13 + 4 + 4 * 8 + 2 * 8;
        assert_eq!(bytes.len(), 41 + weight_record);
    }

    #[test]
    fn roundtrip_restores_params() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        let p = back.params("fee.").unwrap();
        assert_eq!(p.get("fee.L5").unwrap().bias.data(), &[3.0]);
        assert!(back.params("det.").unwrap().is_empty());
    }

    #[test]
    fn corrupt_inputs_are_format_errors() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Format(_))));
        let bytes = sample().to_bytes();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Format(_))
        ));
        assert!(matches!(Checkpoint::from_bytes(b"LFS"), Err(Error::Format(_))));
    }
}
