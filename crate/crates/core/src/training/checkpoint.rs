use std::path::Path;

use crate::autodiff::Array;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"ONBC";
pub const CHECKPOINT_VERSION: u32 = 1;

const TAG_F64: u8 = 0;
const TAG_U64: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F64(Array),
    U64(Vec<u64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub payload: Payload,
}

/// Named arrays plus the effective config and the global step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub config: String,
    pub step: u64,
    pub records: Vec<Record>,
}

impl Checkpoint {
    pub fn push_array(&mut self, name: impl Into<String>, a: &Array) {
        self.records.push(Record {
            name: name.into(),
            payload: Payload::F64(a.clone()),
        });
    }

    pub fn push_u64(&mut self, name: impl Into<String>, v: Vec<u64>) {
        self.records.push(Record {
            name: name.into(),
            payload: Payload::U64(v),
        });
    }

    pub fn get(&self, name: &str) -> Option<&Payload> {
        self.records.iter().find(|r| r.name == name).map(|r| &r.payload)
    }

    pub fn array(&self, name: &str) -> Result<&Array> {
        match self.get(name) {
            Some(Payload::F64(a)) => Ok(a),
            _ => Err(Error::Format(format!("checkpoint has no array '{name}'"))),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<&[u64]> {
        match self.get(name) {
            Some(Payload::U64(v)) => Ok(v),
            _ => Err(Error::Format(format!("checkpoint has no integer record '{name}'"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config.len() as u64).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            match &r.payload {
                Payload::F64(a) => {
                    out.push(TAG_F64);
                    out.extend_from_slice(&2u32.to_le_bytes());
                    out.extend_from_slice(&(a.nrows() as u64).to_le_bytes());
                    out.extend_from_slice(&(a.ncols() as u64).to_le_bytes());
                    for v in a.iter() {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Payload::U64(v) => {
                    out.push(TAG_U64);
                    out.extend_from_slice(&1u32.to_le_bytes());
                    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let len = r.len()?;
        let config = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Format("config is not UTF-8".into()))?;
        let step = r.u64()?;
        let count = r.u32()? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| Error::Format("record name is not UTF-8".into()))?;
            let tag = r.take(1)?[0];
            let rank = r.u32()? as usize;
            let mut dims = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                dims.push(r.len()?);
            }
            let total = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("record '{name}' has overflowing dims")))?;
            let payload = match (tag, rank) {
                (TAG_F64, 2) => {
                    let raw = r.take(total.checked_mul(8).ok_or_else(|| Error::Format("corrupt length".into()))?)?;
                    let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8"))).collect();
                    Payload::F64(Array::from_shape_vec((dims[0], dims[1]), data).expect("length checked"))
                }
                (TAG_U64, 1) => {
                    let raw = r.take(total.checked_mul(8).ok_or_else(|| Error::Format("corrupt length".into()))?)?;
                    Payload::U64(raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().expect("8"))).collect())
                }
                _ => return Err(Error::Format(format!("record '{name}': unsupported dtype {tag} / rank {rank}"))),
            };
            records.push(Record { name, payload });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Self { config, step, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint truncated (corrupt length)".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("length does not fit in memory".into()))
    }
}
