//! Binary model checkpoints.
//!
//! Layout (little-endian): magic `PNCK`, u16 version, u32 length + config
//! JSON, u32 tensor count, then per tensor: u32 name length, name bytes,
//! u32 rank, u32 extents, f64 values.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{ModelConfig, PearNetModel};
use crate::diff::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PNCK";
pub const VERSION: u16 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn to_bytes(model: &PearNetModel) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let cfg = serde_json::to_vec(&model.config)?;
    out.extend_from_slice(MAGIC);
    out.write_u16::<LittleEndian>(VERSION).unwrap();
    out.write_u32::<LittleEndian>(cfg.len() as u32).unwrap();
    out.extend_from_slice(&cfg);
    out.write_u32::<LittleEndian>(model.store.len() as u32).unwrap();
    for (name, t) in model.store.names().iter().zip(model.store.values()) {
        out.write_u32::<LittleEndian>(name.len() as u32).unwrap();
        out.extend_from_slice(name.as_bytes());
        out.write_u32::<LittleEndian>(t.shape().len() as u32).unwrap();
        for &d in t.shape() {
            out.write_u32::<LittleEndian>(d as u32).unwrap();
        }
        for &v in t.data() {
            out.write_f64::<LittleEndian>(v).unwrap();
        }
    }
    Ok(out)
}

fn read_u32(c: &mut Cursor<&[u8]>, what: &str) -> Result<usize> {
    c.read_u32::<LittleEndian>().map(|v| v as usize).map_err(|_| bad(format!("truncated while reading {what}")))
}

/// Parse a checkpoint. With `expected`, the embedded config must match it.
pub fn from_bytes(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<PearNetModel> {
    let mut c = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    c.read_exact(&mut magic).map_err(|_| bad("file too short"))?;
    if &magic != MAGIC {
        return Err(bad("missing PNCK magic"));
    }
    let version = c.read_u16::<LittleEndian>().map_err(|_| bad("truncated version"))?;
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let len = read_u32(&mut c, "config length")?;
    let mut cfg = vec![0u8; len];
    c.read_exact(&mut cfg).map_err(|_| bad("truncated config"))?;
    let config: ModelConfig = serde_json::from_slice(&cfg).map_err(|e| bad(format!("config: {e}")))?;
    if let Some(want) = expected {
        if want != &config {
            return Err(bad("checkpoint config does not match the requested model config"));
        }
    }
    let count = read_u32(&mut c, "tensor count")?;
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        let n = read_u32(&mut c, "name length")?;
        let mut name = vec![0u8; n];
        c.read_exact(&mut name).map_err(|_| bad("truncated name"))?;
        let name = String::from_utf8(name).map_err(|_| bad("name is not UTF-8"))?;
        let rank = read_u32(&mut c, "rank")?;
        let shape = (0..rank).map(|_| read_u32(&mut c, "extent")).collect::<Result<Vec<_>>>()?;
        let total: usize = shape.iter().product();
        if total > bytes.len() / 8 {
            return Err(bad(format!("tensor `{name}` is larger than the file")));
        }
        let data = (0..total)
            .map(|_| c.read_f64::<LittleEndian>().map_err(|_| bad(format!("truncated data for `{name}`"))))
            .collect::<Result<Vec<_>>>()?;
        let t = Tensor::new(shape, data).map_err(|e| bad(format!("`{name}`: {e}")))?;
        values.push((name, t));
    }
    if (c.position() as usize) != bytes.len() {
        return Err(bad("trailing bytes after the last tensor"));
    }
    let mut model = PearNetModel::new(config, 0)?;
    model.store.load_values(values)?;
    Ok(model)
}

pub fn save(model: &PearNetModel, path: &Path) -> Result<()> {
    let bytes = to_bytes(model)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path, expected: Option<&ModelConfig>) -> Result<PearNetModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, expected)
}
