//! Binary checkpoint format.
//!
//! ```text
//! magic "GQCK" | u32 version
//! u32 vocab_size, d_model, n_layers, n_heads, d_ff, max_source_len, max_target_len
//! f32 dropout | u64 seed | u32 tensor count
//! per tensor: u32 name length, name bytes, u32 rank, u32 dims..., f32 data (row-major)
//! ```
//!
//! All integers and reals are little-endian. Values are stored at 32-bit
//! precision, so a reload rounds parameters to the nearest `f32`.

use std::fs;
use std::path::Path;

use super::model::{expected_shapes, ModelConfig, ModelParams, Tensor};
use super::tensor::Mat;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"GQCK";
pub const FORMAT_VERSION: u32 = 1;

pub fn to_bytes(params: &ModelParams) -> Vec<u8> {
    let c = &params.config;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [
        c.vocab_size,
        c.d_model,
        c.n_layers,
        c.n_heads,
        c.d_ff,
        c.max_source_len,
        c.max_target_len,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&(c.dropout as f32).to_le_bytes());
    out.extend_from_slice(&params.seed.to_le_bytes());
    out.extend_from_slice(&(params.tensors.len() as u32).to_le_bytes());
    for t in &params.tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(t.value.rows as u32).to_le_bytes());
        out.extend_from_slice(&(t.value.cols as u32).to_le_bytes());
        for &x in &t.value.data {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Format(format!("checkpoint truncated at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut dims = [0usize; 7];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let config = ModelConfig {
        vocab_size: dims[0],
        d_model: dims[1],
        n_layers: dims[2],
        n_heads: dims[3],
        d_ff: dims[4],
        max_source_len: dims[5],
        max_target_len: dims[6],
        dropout: r.f32()? as f64,
    };
    config.validate()?;
    let seed = r.u64()?;
    let expected = expected_shapes(&config);
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(Error::Format(format!(
            "checkpoint has {count} tensors, config expects {}",
            expected.len()
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for (name, rows, cols) in expected {
        let len = r.u32()? as usize;
        let got = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        if got != name {
            return Err(Error::Format(format!("expected tensor {name:?}, found {got:?}")));
        }
        let rank = r.u32()?;
        if rank != 2 {
            return Err(Error::Format(format!("tensor {name:?} has rank {rank}, expected 2")));
        }
        let (gr, gc) = (r.u32()? as usize, r.u32()? as usize);
        if (gr, gc) != (rows, cols) {
            return Err(Error::Format(format!(
                "tensor {name:?} has shape {gr}x{gc}, config expects {rows}x{cols}"
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            let v = r.f32()?;
            if !v.is_finite() {
                return Err(Error::Format(format!("tensor {name:?} holds a non-finite value")));
            }
            data.push(v as f64);
        }
        tensors.push(Tensor {
            name,
            value: Mat::from_vec(rows, cols, data),
        });
    }
    if r.pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(ModelParams { config, seed, tensors })
}

pub fn save(params: &ModelParams, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(params))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelParams> {
    from_bytes(&fs::read(path)?)
}

/// Rounds every parameter to `f32`, matching what a save and reload yields.
pub fn round_to_f32(params: &mut ModelParams) {
    for t in &mut params.tensors {
        t.value.data.iter_mut().for_each(|x| *x = *x as f32 as f64);
    }
}
