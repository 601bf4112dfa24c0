//! Versioned binary checkpoint: a JSON configuration plus named parameter arrays.
//!
//! ```text
//! magic        8 bytes  "PCQECKPT"
//! version      u32      = 1
//! kind_len     u32, kind (utf-8)       e.g. "generator" or "critic"
//! config_len   u64, config (utf-8 JSON)
//! count        u32
//! per array:
//!   name_len u32, name (utf-8)
//!   rows u64, cols u64
//!   rows * cols x f64
//! ```
//!
//! All integers and floats are little-endian. Values are stored as f64
//! whatever precision the model ran in; f32 weights round-trip exactly.

use std::io::{Read, Write};

use super::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"PCQECKPT";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config: serde_json::Value,
    pub params: ParamStore<f64>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn write_checkpoint<W: Write, T: Real>(
    mut w: W,
    kind: &str,
    config: &serde_json::Value,
    params: &ParamStore<T>,
) -> Result<()> {
    let config = serde_json::to_string(config).map_err(|e| bad(e.to_string()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(kind.len() as u32).to_le_bytes());
    buf.extend_from_slice(kind.as_bytes());
    buf.extend_from_slice(&(config.len() as u64).to_le_bytes());
    buf.extend_from_slice(config.as_bytes());
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, value) in params.names().iter().zip(params.values()) {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(value.rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(value.cols() as u64).to_le_bytes());
        for v in value.to_f64_vec() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(|e| Error::io("<checkpoint>", e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| bad(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| bad("invalid utf-8"))
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io("<checkpoint>", e))?;
    let mut rd = Reader { bytes: &bytes, pos: 0 };
    if rd.take(8)? != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = rd.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let kind_len = rd.u32()? as usize;
    let kind = rd.string(kind_len)?;
    let config_len = rd.u64()? as usize;
    let config = rd.string(config_len)?;
    let config = serde_json::from_str(&config).map_err(|e| bad(format!("config: {e}")))?;
    let count = rd.u32()?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name_len = rd.u32()? as usize;
        let name = rd.string(name_len)?;
        let rows = rd.u64()? as usize;
        let cols = rd.u64()? as usize;
        let len = rows.checked_mul(cols).ok_or_else(|| bad("array too large"))?;
        let raw = rd.take(len.checked_mul(8).ok_or_else(|| bad("array too large"))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if params.get(&name).is_some() {
            return Err(bad(format!("duplicate array {name}")));
        }
        params.add(name, Tensor::from_vec(rows, cols, data));
    }
    if rd.pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(Checkpoint { kind, config, params })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("a.weight", Tensor::from_vec(2, 2, vec![0.1, -0.2, 3.5, 1e-7]));
        s.add("a.bias", Tensor::from_vec(1, 2, vec![0.0, -0.0]));
        s
    }

    #[test]
    fn round_trip_is_exact() {
        let cfg = serde_json::json!({"k": 4, "residual_output": true});
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, "generator", &cfg, &sample()).unwrap();
        let ck = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(ck.kind, "generator");
        assert_eq!(ck.config, cfg);
        assert_eq!(ck.params.cast::<f32>(), sample());
    }

    #[test]
    fn rejects_corruption() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, "critic", &serde_json::json!({}), &sample()).unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
        let mut bad_magic = buf.clone();
        bad_magic[1] = b'!';
        assert!(read_checkpoint(&bad_magic[..]).is_err());
        let mut bad_version = buf.clone();
        bad_version[8] = 2;
        assert!(read_checkpoint(&bad_version[..]).unwrap_err().to_string().contains("version"));
        let mut trailing = buf;
        trailing.push(0);
        assert!(read_checkpoint(&trailing[..]).is_err());
    }
}
