//! `.pbw` weight files.
//!
//! Layout: the magic `PBW1`, then per parameter group a little-endian `u32`
//! name length, the UTF-8 name, a `u32` rank, `rank` `u32` dims and the raw
//! little-endian `f64` values. A trailing little-endian CRC32 covers every
//! preceding byte.

use std::path::Path;

use crate::error::{Error, Result};
use crate::network::ModelGraph;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"PBW1";

pub fn encode_weights(model: &ModelGraph) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for g in model.groups() {
        out.extend((g.name.len() as u32).to_le_bytes());
        out.extend(g.name.as_bytes());
        let shape = g.tensor.shape();
        out.extend((shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend((d as u32).to_le_bytes());
        }
        for v in g.tensor.data() {
            out.extend(v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend(crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated weight file at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Parses a weight file into `(name, tensor)` pairs in file order.
pub fn decode_weights(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    if bytes.len() < MAGIC.len() + 4 {
        return Err(Error::Format("weight file too short".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &bytes[..4])));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::Format(format!(
            "checksum mismatch: stored {stored:08x}, computed {actual:08x}"
        )));
    }
    let mut r = Reader { buf: body, pos: 4 };
    let mut entries = Vec::new();
    while r.pos < body.len() {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(
            numel
                .checked_mul(8)
                .ok_or_else(|| Error::Format("oversized tensor".into()))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Format(format!("{name}: {e}")))?;
        entries.push((name, t));
    }
    Ok(entries)
}

pub fn save_weights(model: &ModelGraph, path: &Path) -> Result<()> {
    std::fs::write(path, encode_weights(model))?;
    Ok(())
}

/// Loads values into an existing model of identical structure. Nothing is
/// modified unless every group matches by name and shape.
pub fn load_weights(model: &mut ModelGraph, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path)?;
    apply_weights(model, &bytes)
}

pub fn apply_weights(model: &mut ModelGraph, bytes: &[u8]) -> Result<()> {
    let entries = decode_weights(bytes)?;
    if entries.len() != model.groups().len() {
        return Err(Error::Format(format!(
            "file holds {} parameter groups, model has {}",
            entries.len(),
            model.groups().len()
        )));
    }
    for ((name, t), g) in entries.iter().zip(model.groups()) {
        if *name != g.name || t.shape() != g.tensor.shape() {
            return Err(Error::Format(format!(
                "group {name} {:?} does not match model group {} {:?}",
                t.shape(),
                g.name,
                g.tensor.shape()
            )));
        }
    }
    for ((_, t), g) in entries.into_iter().zip(model.groups_mut()) {
        g.tensor.data_mut().copy_from_slice(t.data());
    }
    Ok(())
}
