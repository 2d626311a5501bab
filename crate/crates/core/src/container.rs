//! Versioned single-file container for trained models.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "BSENTMDL"
//! version      u32
//! vocab hash   u64
//! kind         u32 length + UTF-8 ("gru", "ocsvm", "ridge")
//! header       u32 length + UTF-8 JSON (hyperparameters, provenance)
//! tensors      u32 count, then per tensor:
//!                name   u32 length + UTF-8
//!                dtype  u8 (0 = f64, 1 = u64)
//!                ndim   u32, dims u64 x ndim
//!                data   product(dims) x 8 bytes
//! ```

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::VocabHash;

pub const MAGIC: &[u8; 8] = b"BSENTMDL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F64(Vec<f64>),
    U64(Vec<u64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn f64(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            name: name.into(),
            shape,
            data: TensorData::F64(data),
        }
    }

    pub fn u64(name: impl Into<String>, shape: Vec<usize>, data: Vec<u64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            name: name.into(),
            shape,
            data: TensorData::U64(data),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: String,
    pub vocab_hash: VocabHash,
    header: Vec<u8>,
    pub tensors: Vec<Tensor>,
}

impl Container {
    pub fn new<H: Serialize>(kind: &str, vocab_hash: VocabHash, header: &H) -> Result<Self> {
        Ok(Container {
            kind: kind.to_string(),
            vocab_hash,
            header: serde_json::to_vec(header)?,
            tensors: Vec::new(),
        })
    }

    pub fn push(&mut self, tensor: Tensor) {
        self.tensors.push(tensor);
    }

    pub fn header<H: DeserializeOwned>(&self) -> Result<H> {
        serde_json::from_slice(&self.header).map_err(|e| Error::Format(format!("model header: {e}")))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::Format(format!("expected a `{kind}` model, found `{}`", self.kind)))
        }
    }

    pub fn check_vocab(&self, expected: VocabHash) -> Result<()> {
        if self.vocab_hash == expected {
            Ok(())
        } else {
            Err(Error::VocabMismatch {
                expected: self.vocab_hash.to_string(),
                actual: expected.to_string(),
            })
        }
    }

    fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Format(format!("missing tensor `{name}`")))
    }

    /// f64 tensor data, checked against the expected shape.
    pub fn f64s(&self, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
        let t = self.tensor(name)?;
        if t.shape != shape {
            return Err(Error::Format(format!(
                "tensor `{name}` has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        match &t.data {
            TensorData::F64(v) => Ok(v.clone()),
            TensorData::U64(_) => Err(Error::Format(format!("tensor `{name}` is not f64"))),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<Vec<u64>> {
        match &self.tensor(name)?.data {
            TensorData::U64(v) => Ok(v.clone()),
            TensorData::F64(_) => Err(Error::Format(format!("tensor `{name}` is not u64"))),
        }
    }

    pub fn shape(&self, name: &str) -> Result<&[usize]> {
        Ok(&self.tensor(name)?.shape)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.vocab_hash.0.to_le_bytes());
        put_bytes(&mut out, self.kind.as_bytes());
        put_bytes(&mut out, &self.header);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            put_bytes(&mut out, t.name.as_bytes());
            out.push(match t.data {
                TensorData::F64(_) => 0,
                TensorData::U64(_) => 1,
            });
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &t.data {
                TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a model file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported model format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let vocab_hash = VocabHash(r.u64()?);
        let kind = r.string()?;
        let header = r.block()?.to_vec();
        let n = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let name = r.string()?;
            let dtype = r.take(1)?[0];
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("tensor `{name}` shape overflows")))?;
            let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
            let words = raw.chunks_exact(8).map(|c| c.try_into().expect("8-byte chunk"));
            let data = match dtype {
                0 => TensorData::F64(words.map(f64::from_le_bytes).collect()),
                1 => TensorData::U64(words.map(u64::from_le_bytes).collect()),
                other => return Err(Error::Format(format!("tensor `{name}` has unknown dtype {other}"))),
            };
            tensors.push(Tensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after last tensor".into()));
        }
        Ok(Container {
            kind,
            vocab_hash,
            header,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_bytes(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_le_bytes());
    out.extend_from_slice(b);
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
            .ok_or_else(|| Error::Format("truncated model file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn block(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn string(&mut self) -> Result<String> {
        String::from_utf8(self.block()?.to_vec()).map_err(|_| Error::Format("invalid UTF-8 in model file".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct H {
        hidden: usize,
    }

    fn sample() -> Container {
        let mut c = Container::new("gru", VocabHash(0xabcdef), &H { hidden: 4 }).unwrap();
        c.push(Tensor::f64("w", vec![2, 2], vec![1.0, -2.5, f64::MIN_POSITIVE, 0.0]));
        c.push(Tensor::u64("idx", vec![3], vec![0, 7, u64::MAX]));
        c
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let back = Container::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.header::<H>().unwrap(), H { hidden: 4 });
        assert_eq!(back.f64s("w", &[2, 2]).unwrap()[1], -2.5);
        assert!(back.f64s("w", &[4]).is_err());
    }

    #[test]
    fn rejects_bad_magic_version_and_hash() {
        let bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Container::from_bytes(&bad), Err(Error::Format(_))));
        let mut v2 = bytes.clone();
        v2[8] = 2;
        let err = Container::from_bytes(&v2).unwrap_err().to_string();
        assert!(err.contains("version 2"), "{err}");
        assert!(Container::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let c = Container::from_bytes(&bytes).unwrap();
        assert!(c.check_vocab(VocabHash(0xabcdef)).is_ok());
        assert!(matches!(c.check_vocab(VocabHash(1)), Err(Error::VocabMismatch { .. })));
        assert!(c.expect_kind("ocsvm").is_err());
    }
}
