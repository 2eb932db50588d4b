//! `CWNN` checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "CWNN"  u16 version
//! repeated until EOF:
//!     u32 name_len, name (UTF-8)
//!     u32 ndims, ndims × u32 dims
//!     prod(dims) × f32 payload
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{NnError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CWNN";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub records: Vec<CheckpointRecord>,
}

impl Checkpoint {
    pub fn push(&mut self, name: impl Into<String>, dims: &[usize], data: impl IntoIterator<Item = f32>) {
        let data: Vec<f32> = data.into_iter().collect();
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        self.records.push(CheckpointRecord { name: name.into(), dims: dims.iter().map(|&d| d as u32).collect(), data });
    }

    pub fn get(&self, name: &str) -> Option<&CheckpointRecord> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.extend_from_slice(&(r.dims.len() as u32).to_le_bytes());
            for d in &r.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &r.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut cur, &mut magic, "magic")?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(NnError::Checkpoint(format!("bad magic {magic:?}")));
        }
        let version = u16::from_le_bytes(take::<2>(&mut cur, "version")?);
        if version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {version}")));
        }
        let mut records = Vec::new();
        while !cur.is_empty() {
            let name_len = u32::from_le_bytes(take::<4>(&mut cur, "name length")?) as usize;
            let mut name = vec![0u8; name_len];
            read_exact(&mut cur, &mut name, "name")?;
            let name = String::from_utf8(name).map_err(|_| NnError::Checkpoint("record name is not UTF-8".into()))?;
            let ndims = u32::from_le_bytes(take::<4>(&mut cur, "dim count")?) as usize;
            let dims = (0..ndims)
                .map(|_| take::<4>(&mut cur, "dims").map(u32::from_le_bytes))
                .collect::<Result<Vec<u32>>>()?;
            let count = dims.iter().map(|&d| d as usize).product::<usize>();
            if cur.len() < count * 4 {
                return Err(NnError::Checkpoint(format!("record `{name}` truncated")));
            }
            let data = cur[..count * 4].chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            cur = &cur[count * 4..];
            records.push(CheckpointRecord { name, dims, data });
        }
        Ok(Checkpoint { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn read_exact(cur: &mut &[u8], buf: &mut [u8], what: &str) -> Result<()> {
    cur.read_exact(buf).map_err(|_| NnError::Checkpoint(format!("truncated while reading {what}")))
}

fn take<const N: usize>(cur: &mut &[u8], what: &str) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    read_exact(cur, &mut b, what)?;
    Ok(b)
}
