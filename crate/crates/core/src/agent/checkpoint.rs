//! `VIAGENT1` checkpoints.
//!
//! Layout (little-endian): 8-byte magic, `u32` version, `u32` metadata
//! length and the UTF-8 `key = value` agent config, `u32` tensor count,
//! then per tensor a `u32`-length-prefixed name, `u32` rank, `u32` dims and
//! `f32` values.

use std::io::{Read, Write};
use std::path::Path;

use super::{AgentConfig, AgentParams, ParamId};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

const MAGIC: &[u8; 8] = b"VIAGENT1";
const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Validation(format!("{v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_checkpoint(params: &AgentParams) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(64 + 4 * params.n_values());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let meta = params.config.to_text();
    put_u32(&mut out, meta.len())?;
    out.extend_from_slice(meta.as_bytes());
    put_u32(&mut out, ParamId::ALL.len())?;
    for (id, t) in ParamId::ALL.iter().zip(params.tensors()) {
        put_u32(&mut out, id.name().len())?;
        out.extend_from_slice(id.name().as_bytes());
        put_u32(&mut out, t.shape().len())?;
        for &d in t.shape() {
            put_u32(&mut out, d)?;
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Format {
            offset: self.pos as u64,
            message: format!("truncated: needed {n} bytes, {} remain", self.bytes.len() - self.pos),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn text(&mut self, n: usize) -> Result<&'a str> {
        let at = self.pos as u64;
        std::str::from_utf8(self.take(n)?).map_err(|e| Error::Format {
            offset: at,
            message: format!("invalid UTF-8: {e}"),
        })
    }

    fn err(&self, message: String) -> Error {
        Error::Format { offset: self.pos as u64, message }
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<AgentParams> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(Error::Format { offset: 0, message: "bad checkpoint magic".into() });
    }
    let version = cur.u32()?;
    if version != VERSION as usize {
        return Err(Error::Format {
            offset: 8,
            message: format!("checkpoint version {version} not supported"),
        });
    }
    let meta_len = cur.u32()?;
    let config = AgentConfig::from_text(cur.text(meta_len)?)?;
    let count = cur.u32()?;
    if count != ParamId::ALL.len() {
        return Err(cur.err(format!("{count} tensors, expected {}", ParamId::ALL.len())));
    }
    let mut tensors = Vec::with_capacity(count);
    for id in ParamId::ALL {
        let n = cur.u32()?;
        let name = cur.text(n)?;
        if name != id.name() {
            return Err(cur.err(format!("tensor {name:?} where {:?} was expected", id.name())));
        }
        let rank = cur.u32()?;
        let shape = (0..rank).map(|_| cur.u32()).collect::<Result<Vec<_>>>()?;
        if shape != id.shape(&config) {
            return Err(cur.err(format!("{name} has shape {shape:?}, config implies {:?}", id.shape(&config))));
        }
        let len: usize = shape.iter().product();
        let raw = cur.take(len.checked_mul(4).ok_or_else(|| cur.err("tensor size overflow".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        tensors.push(Tensor::new(shape, data)?);
    }
    if cur.pos != bytes.len() {
        return Err(cur.err(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    AgentParams::from_tensors(&config, tensors)
}

pub fn save_checkpoint(params: &AgentParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(params)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<AgentParams> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
