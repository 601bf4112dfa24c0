//! Versioned binary container for generated patches and their groupings.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes  "PCQEPTCH"
//! version      u32      = 1
//! num_points   u64      size of the parent cloud
//! num_patches  u32
//! num_nei      u32      0 when the archive carries no grouping
//! per patch:
//!   seed_index u64
//!   n          u32
//!   indices    n x u64
//!   geometry   n x 3 x f64
//!   attributes n x 3 x f64
//!   neighbors  num_nei x u32
//! ```

use std::io::{Read, Write};

use super::{GroupedPatch, Patch};
use crate::error::{Error, Result};

pub const ARCHIVE_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"PCQEPTCH";

#[derive(Debug, Clone, PartialEq)]
pub struct PatchArchive {
    pub num_points: usize,
    pub patches: Vec<Patch>,
    /// Empty, or one entry per patch.
    pub groups: Vec<GroupedPatch>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Argument(format!("patch archive: {}", msg.into()))
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<patch archive>", e)
}

pub fn write_archive<W: Write>(mut w: W, archive: &PatchArchive) -> Result<()> {
    let num_nei = archive.groups.first().map_or(0, |g| g.neighbors.len());
    if !archive.groups.is_empty() && archive.groups.len() != archive.patches.len() {
        return Err(corrupt("groups must cover every patch"));
    }
    if archive.groups.iter().any(|g| g.neighbors.len() != num_nei) {
        return Err(corrupt("groups have inconsistent neighbor counts"));
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(archive.num_points as u64).to_le_bytes());
    buf.extend_from_slice(&(archive.patches.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(num_nei as u32).to_le_bytes());
    for (i, p) in archive.patches.iter().enumerate() {
        buf.extend_from_slice(&(p.seed_index as u64).to_le_bytes());
        buf.extend_from_slice(&(p.len() as u32).to_le_bytes());
        for &idx in &p.indices {
            buf.extend_from_slice(&(idx as u64).to_le_bytes());
        }
        for v in p.geometry.iter().chain(&p.attributes).flatten() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(g) = archive.groups.get(i) {
            for &nb in &g.neighbors {
                buf.extend_from_slice(&(nb as u32).to_le_bytes());
            }
        }
    }
    w.write_all(&buf).map_err(io_err)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let s = self.bytes.get(self.pos..end).ok_or_else(|| corrupt(format!("truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(s.try_into().unwrap())
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
    fn point(&mut self) -> Result<[f64; 3]> {
        Ok([self.f64()?, self.f64()?, self.f64()?])
    }
}

pub fn read_archive<R: Read>(mut r: R) -> Result<PatchArchive> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(io_err)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if &c.take::<8>()? != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = c.u32()?;
    if version != ARCHIVE_VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let num_points = c.u64()? as usize;
    let num_patches = c.u32()? as usize;
    let num_nei = c.u32()? as usize;
    let mut patches = Vec::with_capacity(num_patches);
    let mut groups = Vec::new();
    for center in 0..num_patches {
        let seed_index = c.u64()? as usize;
        let n = c.u32()? as usize;
        let indices = (0..n).map(|_| c.u64().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        if indices.iter().any(|&i| i >= num_points) {
            return Err(corrupt("point index out of range"));
        }
        let geometry = (0..n).map(|_| c.point()).collect::<Result<Vec<_>>>()?;
        let attributes = (0..n).map(|_| c.point()).collect::<Result<Vec<_>>>()?;
        patches.push(Patch { indices, seed_index, geometry, attributes });
        if num_nei > 0 {
            let neighbors = (0..num_nei).map(|_| c.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            if neighbors.iter().any(|&p| p >= num_patches) {
                return Err(corrupt("neighbor patch index out of range"));
            }
            groups.push(GroupedPatch { center, neighbors });
        }
    }
    if c.pos != bytes.len() {
        return Err(corrupt("trailing bytes"));
    }
    Ok(PatchArchive { num_points, patches, groups })
}
