//! Checkpoint container, all integers and floats little-endian:
//!
//! | field            | type                  |
//! |------------------|-----------------------|
//! | magic            | `b"TWMLP\0"`          |
//! | version          | u32 (= 1)             |
//! | config length    | u32                   |
//! | config           | UTF-8 JSON            |
//! | tensor count     | u32                   |
//! | per tensor       | u32 rows, u32 cols, rows·cols × f32 |
//!
//! Tensors appear in parameter declaration order.

use std::io::{Read, Write};
use std::path::Path;

use super::params::ModelParams;
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"TWMLP\0";
const VERSION: u32 = 1;

pub fn write_checkpoint<F: Real, W: Write>(params: &ModelParams<F>, mut w: W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let cfg = serde_json::to_vec(&params.config)?;
    w.write_all(&(cfg.len() as u32).to_le_bytes())?;
    w.write_all(&cfg)?;
    let tensors = params.tensors.iter();
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        w.write_all(&(t.rows() as u32).to_le_bytes())?;
        w.write_all(&(t.cols() as u32).to_le_bytes())?;
        for &x in t.data() {
            w.write_all(&(x.as_f64() as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                msg: format!("truncated while reading {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn read_checkpoint<F: Real, R: Read>(mut r: R) -> Result<ModelParams<F>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(6, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format { offset: 0, msg: "bad checkpoint magic".into() });
    }
    let at = c.pos as u64;
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::Format { offset: at, msg: format!("unsupported version {version}") });
    }
    let len = c.u32("config length")? as usize;
    let at = c.pos as u64;
    let config: ModelConfig = serde_json::from_slice(c.take(len, "config")?)
        .map_err(|e| Error::Format { offset: at, msg: format!("bad config: {e}") })?;
    let at = c.pos as u64;
    let count = c.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let rows = c.u32("rows")? as usize;
        let cols = c.u32("cols")? as usize;
        let bytes = c.take(rows * cols * 4, "tensor data")?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| F::lit(f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64))
            .collect();
        tensors.push(Tensor::from_vec(rows, cols, data)?);
    }
    if c.pos != buf.len() {
        return Err(Error::Format { offset: c.pos as u64, msg: "trailing bytes".into() });
    }
    ModelParams::from_tensors(config, tensors).map_err(|e| Error::Format { offset: at, msg: e.to_string() })
}

pub fn save_checkpoint<F: Real>(params: &ModelParams<F>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(params, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint<F: Real>(path: &Path) -> Result<ModelParams<F>> {
    read_checkpoint(std::fs::File::open(path)?)
}
