//! Binary envelope for parameter checkpoints and correspondence tables.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic      4 bytes  "FPXY"
//! version    u32      FORMAT_VERSION
//! kind       u32      1 = parameters, 2 = correspondence
//! body
//!
//! segment table:  u32 count, then per segment
//!                 u32 name_len, name (UTF-8), u64 offset, u64 len
//! parameters:     segment table, u64 n_values, n_values × f64
//! correspondence: proxy segment table, backbone segment table,
//!                 u32 n_pairs, n_pairs × (u32 proxy_idx, u32 backbone_idx)
//! ```

use std::path::Path;
use std::sync::Arc;

use crate::compression::Correspondence;
use crate::error::{Error, Result};
use crate::params::{FlatParams, ParamLayout, Segment};

pub const MAGIC: &[u8; 4] = b"FPXY";
pub const FORMAT_VERSION: u32 = 1;

const KIND_PARAMS: u32 = 1;
const KIND_CORRESPONDENCE: u32 = 2;

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_header(buf: &mut Vec<u8>, kind: u32) {
    buf.extend_from_slice(MAGIC);
    put_u32(buf, FORMAT_VERSION);
    put_u32(buf, kind);
}

fn put_layout(buf: &mut Vec<u8>, layout: &ParamLayout) {
    put_u32(buf, layout.segments().len() as u32);
    for seg in layout.segments() {
        put_u32(buf, seg.name.len() as u32);
        buf.extend_from_slice(seg.name.as_bytes());
        put_u64(buf, seg.offset as u64);
        put_u64(buf, seg.len as u64);
    }
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
            .ok_or_else(|| Error::Format(format!("truncated file: need {n} bytes at offset {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("length exceeds address space".into()))
    }

    fn header(&mut self, expected_kind: u32) -> Result<()> {
        if self.take(4)? != MAGIC {
            return Err(Error::Format("bad magic bytes (not an FPXY file)".into()));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let kind = self.u32()?;
        if kind != expected_kind {
            return Err(Error::Format(format!("payload kind {kind}, expected {expected_kind}")));
        }
        Ok(())
    }

    fn layout(&mut self) -> Result<ParamLayout> {
        let count = self.u32()? as usize;
        let mut segments = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = self.u32()? as usize;
            let name = std::str::from_utf8(self.take(name_len)?)
                .map_err(|_| Error::Format("segment name is not UTF-8".into()))?
                .to_owned();
            let offset = self.usize()?;
            let len = self.usize()?;
            segments.push(Segment { name, offset, len });
        }
        ParamLayout::from_segments(segments)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after payload",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub fn encode_params(params: &FlatParams) -> Vec<u8> {
    let mut buf = Vec::with_capacity(64 + params.dim() * 8);
    put_header(&mut buf, KIND_PARAMS);
    put_layout(&mut buf, params.layout());
    put_u64(&mut buf, params.dim() as u64);
    for v in params.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_params(bytes: &[u8]) -> Result<FlatParams> {
    let mut r = Reader { bytes, pos: 0 };
    r.header(KIND_PARAMS)?;
    let layout = r.layout()?;
    let n = r.usize()?;
    if n != layout.total_dim() {
        return Err(Error::Format(format!(
            "value count {n} does not match layout ({} dims)",
            layout.total_dim()
        )));
    }
    let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Format("value count overflows".into()))?)?;
    let values = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    r.finish()?;
    FlatParams::new(Arc::new(layout), values).map_err(|e| Error::Format(e.to_string()))
}

pub fn encode_correspondence(corr: &Correspondence) -> Vec<u8> {
    let mut buf = Vec::new();
    put_header(&mut buf, KIND_CORRESPONDENCE);
    put_layout(&mut buf, corr.proxy_layout());
    put_layout(&mut buf, corr.backbone_layout());
    put_u32(&mut buf, corr.pairs().len() as u32);
    for &(p, b) in corr.pairs() {
        put_u32(&mut buf, p as u32);
        put_u32(&mut buf, b as u32);
    }
    buf
}

pub fn decode_correspondence(bytes: &[u8]) -> Result<Correspondence> {
    let mut r = Reader { bytes, pos: 0 };
    r.header(KIND_CORRESPONDENCE)?;
    let proxy = r.layout()?;
    let backbone = r.layout()?;
    let n = r.u32()? as usize;
    let mut pairs = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        pairs.push((r.u32()? as usize, r.u32()? as usize));
    }
    r.finish()?;
    Correspondence::new(Arc::new(proxy), Arc::new(backbone), pairs).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_checkpoint(params: &FlatParams, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_params(params))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<FlatParams> {
    decode_params(&std::fs::read(path)?)
}

pub fn save_correspondence(corr: &Correspondence, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_correspondence(corr))?;
    Ok(())
}

pub fn load_correspondence(path: impl AsRef<Path>) -> Result<Correspondence> {
    decode_correspondence(&std::fs::read(path)?)
}
