//! Versioned binary checkpoint: magic `WBVL`, u32 version, length-prefixed
//! UTF-8 config snapshot, named tensor records and a trailing CRC32 of every
//! preceding byte. All integers and floats are little-endian.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"WBVL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorRecord {
    pub fn new(name: impl Into<String>, shape: &[usize], data: Vec<f32>) -> Result<TensorRecord> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::dim(format!("{name}: {} values for shape {shape:?}", data.len())));
        }
        if shape.len() > u8::MAX as usize {
            return Err(Error::dim(format!("{name}: rank {} too large", shape.len())));
        }
        Ok(TensorRecord { name, shape: shape.to_vec(), data })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub snapshot: String,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&TensorRecord> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.snapshot.len() as u32).to_le_bytes());
        out.extend_from_slice(self.snapshot.as_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        if bytes.len() < 16 {
            return Err(Error::Parse { offset: bytes.len(), message: "checkpoint is truncated".into() });
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Parse { offset: 0, message: "bad magic, not a checkpoint".into() });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(Error::Integrity(format!("CRC mismatch: stored {stored:08x}, computed {actual:08x}")));
        }
        let mut r = Reader { bytes: body, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Version { found: version, supported: FORMAT_VERSION });
        }
        let len = r.u32()? as usize;
        let at = r.pos;
        let snapshot = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Parse { offset: at, message: "config snapshot is not UTF-8".into() })?;
        let mut tensors = Vec::new();
        let mut seen = HashSet::new();
        while r.pos < body.len() {
            let at = r.pos;
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Parse { offset: at + 4, message: "tensor name is not UTF-8".into() })?;
            if !seen.insert(name.clone()) {
                return Err(Error::Integrity(format!("tensor `{name}` appears twice")));
            }
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let d = r.u64()?;
                shape.push(usize::try_from(d).map_err(|_| r.error("dimension overflows usize"))?);
            }
            let count = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| r.error("tensor size overflows"))?;
            let payload = r.take(count)?;
            let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            tensors.push(TensorRecord { name, shape, data });
        }
        Ok(Checkpoint { snapshot, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn error(&self, message: &str) -> Error {
        Error::Parse { offset: self.pos, message: message.into() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.bytes.len() - self.pos {
            return Err(self.error(&format!("record needs {n} bytes, {} left", self.bytes.len() - self.pos)));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            snapshot: "seed = 1\n".into(),
            tensors: vec![
                TensorRecord::new("a.weight", &[2, 3], vec![1.0, -2.0, 0.5, 0.0, f32::MIN_POSITIVE, 7.25]).unwrap(),
                TensorRecord::new("b", &[], vec![3.0]).unwrap(),
            ],
        }
    }

    #[test]
    fn roundtrip() {
        let c = sample();
        let bytes = c.to_bytes();
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), c);
    }

    #[test]
    fn empty_roundtrip() {
        let c = Checkpoint::default();
        assert_eq!(Checkpoint::from_bytes(&c.to_bytes()).unwrap(), c);
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..4], b"WBVL");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[9, 0, 0, 0]);
    }

    #[test]
    fn newer_version_is_rejected() {
        let mut bytes = sample().to_bytes();
        bytes[4] = 2;
        let n = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..n]);
        bytes[n..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Version { found: 2, supported: 1 })));
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut c = sample();
        c.tensors.push(c.tensors[1].clone());
        assert!(matches!(Checkpoint::from_bytes(&c.to_bytes()), Err(Error::Integrity(_))));
    }
}
