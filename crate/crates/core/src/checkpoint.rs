//! `GRNCKPT1` checkpoint container.
//!
//! ```text
//! magic    8 bytes  "GRNCKPT1"
//! version  u8       1
//! record*  until EOF
//!   name_len  u32 LE
//!   name      name_len bytes, UTF-8
//!   dtype     u8      0 = f64, 1 = f32
//!   rank      u8
//!   extents   rank × u64 LE
//!   values    product(extents) × (8 or 4) bytes LE
//! ```
//!
//! Values are held in memory as `f64`; `f32` records convert losslessly in
//! both directions, so save → load → save is byte-identical.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"GRNCKPT1";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F64,
    F32,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F64 => 0,
            DType::F32 => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(DType::F64),
            1 => Ok(DType::F32),
            other => Err(Error::Checkpoint(format!("unknown dtype code {other}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::F32 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub dtype: DType,
    pub value: Tensor,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub records: Vec<Record>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

impl Checkpoint {
    /// All parameters of a store as `f64` records, in registration order.
    pub fn from_store(store: &ParamStore) -> Self {
        Checkpoint {
            records: store
                .iter()
                .map(|(_, name, value)| Record {
                    name: name.to_string(),
                    dtype: DType::F64,
                    value: value.clone(),
                })
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    /// Loads every store parameter from the same-named record. The name
    /// sets must match exactly and shapes must agree.
    pub fn apply_to(&self, store: &mut ParamStore) -> Result<()> {
        if self.records.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model has {}",
                self.records.len(),
                store.len()
            )));
        }
        for r in &self.records {
            let id = store
                .id(&r.name)
                .ok_or_else(|| Error::Checkpoint(format!("model has no parameter {}", r.name)))?;
            if store.value(id).shape() != r.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "{}: checkpoint shape {:?}, model shape {:?}",
                    r.name,
                    r.value.shape(),
                    store.value(id).shape()
                )));
            }
            store.set(id, r.value.clone())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        for r in &self.records {
            let name = r.name.as_bytes();
            let len = u32::try_from(name.len()).map_err(|_| Error::Checkpoint("name too long".into()))?;
            let rank = u8::try_from(r.value.rank())
                .map_err(|_| Error::Checkpoint(format!("{}: rank above 255", r.name)))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name);
            out.push(r.dtype.code());
            out.push(rank);
            for &e in r.value.shape() {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            for &v in r.value.data() {
                match r.dtype {
                    DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
                    DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = Reader { bytes, pos: 0 };
        if rd.take(8, "magic").ok() != Some(MAGIC.as_slice()) {
            return Err(Error::Checkpoint("missing GRNCKPT1 magic".into()));
        }
        let version = rd.u8("version")?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        while !rd.done() {
            let len = rd.u32("name length")? as usize;
            let name = std::str::from_utf8(rd.take(len, "name")?)
                .map_err(|_| Error::Checkpoint("name is not UTF-8".into()))?
                .to_string();
            if !seen.insert(name.clone()) {
                return Err(Error::Checkpoint(format!("duplicate record {name}")));
            }
            let dtype = DType::from_code(rd.u8("dtype")?)?;
            let rank = rd.u8("rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(usize::try_from(rd.u64("extent")?).map_err(|_| Error::Checkpoint("extent overflow".into()))?);
            }
            let count = shape
                .iter()
                .try_fold(1usize, |a, &e| a.checked_mul(e))
                .ok_or_else(|| Error::Checkpoint(format!("{name}: element count overflow")))?;
            let nbytes = count
                .checked_mul(dtype.width())
                .ok_or_else(|| Error::Checkpoint(format!("{name}: byte count overflow")))?;
            let raw = rd.take(nbytes, &format!("values of {name}"))?;
            let data: Vec<f64> = match dtype {
                DType::F64 => raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
                DType::F32 => raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect(),
            };
            records.push(Record {
                name,
                dtype,
                value: Tensor::new(shape, data)?,
            });
        }
        Ok(Checkpoint { records })
    }

    /// Writes to a sibling temporary file and renames it into place, so a
    /// crash never leaves a partial checkpoint at `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn sample() -> Checkpoint {
        let mut rng = Rng::new(1);
        Checkpoint {
            records: vec![
                Record {
                    name: "a.w".into(),
                    dtype: DType::F64,
                    value: Tensor::randn(&[3, 2], 1.0, &mut rng),
                },
                Record {
                    name: "b".into(),
                    dtype: DType::F32,
                    value: Tensor::vector(vec![0.5, -1.25, 3.0]),
                },
                Record {
                    name: "s".into(),
                    dtype: DType::F64,
                    value: Tensor::scalar(f64::MIN_POSITIVE),
                },
            ],
        }
    }

    #[test]
    fn byte_round_trip() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes().unwrap();
        assert_eq!(&bytes[..8], b"GRNCKPT1");
        assert_eq!(bytes[8], 1);
        assert_eq!(u32::from_le_bytes(bytes[9..13].try_into().unwrap()), 3);
        assert_eq!(&bytes[13..16], b"a.w");
        assert_eq!(bytes[16], 0);
        assert_eq!(bytes[17], 2);
        assert_eq!(u64::from_le_bytes(bytes[18..26].try_into().unwrap()), 3);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"GRNCKPT2\x01").is_err());
        let mut v = bytes.clone();
        v[8] = 2;
        assert!(Checkpoint::from_bytes(&v).is_err());
        let mut v = bytes;
        v[16] = 9;
        assert!(Checkpoint::from_bytes(&v).is_err());
        assert_eq!(Checkpoint::from_bytes(b"GRNCKPT1\x01").unwrap().records.len(), 0);
    }

    #[test]
    fn store_round_trip_and_mismatch() {
        let mut store = ParamStore::new();
        store.add("x", Tensor::ones(&[2, 2]), true).unwrap();
        let ck = Checkpoint::from_store(&store);
        let mut other = ParamStore::new();
        let id = other.add("x", Tensor::zeros(&[2, 2]), true).unwrap();
        ck.apply_to(&mut other).unwrap();
        assert_eq!(other.value(id), &Tensor::ones(&[2, 2]));
        let mut wrong = ParamStore::new();
        wrong.add("x", Tensor::zeros(&[3]), true).unwrap();
        assert!(ck.apply_to(&mut wrong).is_err());
    }
}
