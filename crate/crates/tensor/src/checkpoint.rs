//! Parameter checkpoints.
//!
//! Binary layout (little endian): magic `CPCK`, `u32` version, `u32` tensor
//! count, then per tensor: `u32` name length, UTF-8 name, `u32` rank, `u64`
//! dims, and the raw `f64` bit patterns. The binary form round-trips bit
//! for bit. The JSON form is `{"tensors":[{"name","shape","data"}]}`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{ParamSet, Result, Tensor, TensorError};

const MAGIC: &[u8; 4] = b"CPCK";
const VERSION: u32 = 1;

pub fn encode_checkpoint(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(TensorError::Checkpoint("truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<ParamSet> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(TensorError::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(TensorError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = c.u32()? as usize;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|e| TensorError::Checkpoint(e.to_string()))?
            .to_string();
        let rank = c.u32()? as usize;
        let shape = (0..rank).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| c.u64().map(f64::from_bits)).collect::<Result<Vec<_>>>()?;
        params.push(name, Tensor::new(shape, data)?);
    }
    if c.pos != buf.len() {
        return Err(TensorError::Checkpoint("trailing bytes".into()));
    }
    Ok(params)
}

pub fn write_checkpoint(path: impl AsRef<Path>, params: &ParamSet) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_checkpoint(params))?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<ParamSet> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    decode_checkpoint(&buf)
}

#[derive(Serialize, Deserialize)]
struct JsonTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct JsonCheckpoint {
    tensors: Vec<JsonTensor>,
}

pub fn write_checkpoint_json(path: impl AsRef<Path>, params: &ParamSet) -> Result<()> {
    let doc = JsonCheckpoint {
        tensors: params
            .iter()
            .map(|(name, t)| JsonTensor {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect(),
    };
    let s = serde_json::to_string(&doc).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_checkpoint_json(path: impl AsRef<Path>) -> Result<ParamSet> {
    let s = std::fs::read_to_string(path)?;
    let doc: JsonCheckpoint = serde_json::from_str(&s).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
    let mut params = ParamSet::new();
    for t in doc.tensors {
        params.push(t.name, Tensor::new(t.shape, t.data)?);
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_garbage() {
        assert!(decode_checkpoint(b"nope").is_err());
        let mut p = ParamSet::new();
        p.push("w", Tensor::row(&[1.0]));
        let mut bytes = encode_checkpoint(&p);
        bytes.pop();
        assert!(decode_checkpoint(&bytes).is_err());
    }
}
