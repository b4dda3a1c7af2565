//! Binary checkpoint format.
//!
//! ```text
//! magic      8 bytes  "CARERec1"
//! version    u32
//! config     u32 length + JSON {config, vocab_size, item_count}
//! manifest   u32 count, then per tensor: u16 name length, name, u8 rank, u32 dims
//! data       f32 values of every tensor, manifest order
//! crc32      u32 over everything above
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Params, RecConfig, RecModel, SeqRecError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CARERec1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: RecConfig,
    vocab_size: usize,
    item_count: usize,
}

pub fn write_checkpoint(model: &RecModel<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let header = Header { config: model.config.clone(), vocab_size: model.vocab_size(), item_count: model.item_count() };
    let json = serde_json::to_vec(&header).expect("header serializes");
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let views = model.params.views();
    out.extend_from_slice(&(views.len() as u32).to_le_bytes());
    for v in &views {
        out.extend_from_slice(&(v.name.len() as u16).to_le_bytes());
        out.extend_from_slice(v.name.as_bytes());
        out.push(v.shape.len() as u8);
        for &dim in &v.shape {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
    }
    for v in &views {
        for x in v.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn save_checkpoint(model: &RecModel<f32>, path: &Path) -> Result<(), SeqRecError> {
    fs::write(path, write_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<RecModel<f32>, SeqRecError> {
    read_checkpoint(&fs::read(path)?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SeqRecError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(SeqRecError::Truncated)?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, SeqRecError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u16(&mut self) -> Result<u16, SeqRecError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8, SeqRecError> {
        Ok(self.take(1)?[0])
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<RecModel<f32>, SeqRecError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8)? != CHECKPOINT_MAGIC {
        return Err(SeqRecError::BadMagic);
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(SeqRecError::Version { found: version, supported: CHECKPOINT_VERSION });
    }
    let header_len = cur.u32()? as usize;
    let header_bytes = cur.take(header_len)?;
    let count = cur.u32()? as usize;
    let mut manifest = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = cur.u16()? as usize;
        let name = String::from_utf8_lossy(cur.take(name_len)?).into_owned();
        let rank = cur.u8()? as usize;
        let shape = (0..rank).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        manifest.push((name, shape));
    }
    let elements: usize = manifest.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    let expected = cur.pos + elements * 4 + 4;
    if bytes.len() < expected {
        return Err(SeqRecError::Truncated);
    }
    if bytes.len() > expected {
        return Err(SeqRecError::Format(format!("{} trailing bytes", bytes.len() - expected)));
    }
    let body = &bytes[..expected - 4];
    let stored = u32::from_le_bytes(bytes[expected - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(SeqRecError::Checksum { stored, computed });
    }

    let header: Header = serde_json::from_slice(header_bytes).map_err(|e| SeqRecError::Format(e.to_string()))?;
    let c = &header.config;
    let mut params = Params::<f32>::zeros(header.vocab_size, header.item_count, c.embed_dim, c.layers, c.max_sequence_length);
    let layout: Vec<(String, Vec<usize>)> = params.views().into_iter().map(|v| (v.name, v.shape)).collect();
    if layout != manifest {
        return Err(SeqRecError::Format("tensor manifest does not match the declared config".into()));
    }
    for tensor in params.tensors_mut() {
        for v in tensor.iter_mut() {
            *v = f32::from_le_bytes(cur.take(4)?.try_into().unwrap());
        }
    }
    RecModel::from_params(header.config, params)
}
