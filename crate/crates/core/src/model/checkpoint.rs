//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "TSANCKPT"
//! version    u32
//! meta_len   u32      length of the TOML metadata block
//! meta       meta_len bytes, UTF-8 TOML: `iteration` and a `[model]` table
//! count      u32      number of tensors
//! tensor*    name_len u32, name (UTF-8), ndim u32, dims u64 × ndim,
//!            data f32 × product(dims), row-major
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::error::{Error, IoContext, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"TSANCKPT";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    /// Training iterations completed when the checkpoint was written.
    pub iteration: u64,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    iteration: u64,
    model: ModelConfig,
}

fn corrupt(e: impl std::fmt::Display) -> Error {
    Error::Checkpoint(e.to_string())
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, iteration: u64) -> Result<()> {
    let meta = toml::to_string(&Meta {
        iteration,
        model: params.config().clone(),
    })
    .map_err(corrupt)?;
    let mut w = BufWriter::new(File::create(path).at(path)?);
    let io = |r: std::io::Result<()>| r.at(path);
    io(w.write_all(MAGIC))?;
    io(w.write_u32::<LittleEndian>(CHECKPOINT_VERSION))?;
    io(w.write_u32::<LittleEndian>(meta.len() as u32))?;
    io(w.write_all(meta.as_bytes()))?;
    let count = params.iter().count();
    io(w.write_u32::<LittleEndian>(count as u32))?;
    for (name, t) in params.iter() {
        io(w.write_u32::<LittleEndian>(name.len() as u32))?;
        io(w.write_all(name.as_bytes()))?;
        io(w.write_u32::<LittleEndian>(t.ndim() as u32))?;
        for &d in t.shape() {
            io(w.write_u64::<LittleEndian>(d as u64))?;
        }
        for &v in t.iter() {
            io(w.write_f32::<LittleEndian>(v))?;
        }
    }
    io(w.flush())
}

fn read_block(r: &mut impl Read, len: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(corrupt)?;
    Ok(buf)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path).at(path)?);
    if read_block(&mut r, 8)? != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint", path.display())));
    }
    let version = r.read_u32::<LittleEndian>().map_err(corrupt)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let meta_len = r.read_u32::<LittleEndian>().map_err(corrupt)? as usize;
    let meta = String::from_utf8(read_block(&mut r, meta_len)?).map_err(corrupt)?;
    let meta: Meta = toml::from_str(&meta).map_err(corrupt)?;
    let count = r.read_u32::<LittleEndian>().map_err(corrupt)?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.read_u32::<LittleEndian>().map_err(corrupt)? as usize;
        let name = String::from_utf8(read_block(&mut r, name_len)?).map_err(corrupt)?;
        let ndim = r.read_u32::<LittleEndian>().map_err(corrupt)? as usize;
        let dims = (0..ndim)
            .map(|_| r.read_u64::<LittleEndian>().map(|d| d as usize).map_err(corrupt))
            .collect::<Result<Vec<_>>>()?;
        let mut data = vec![0f32; dims.iter().product()];
        r.read_f32_into::<LittleEndian>(&mut data).map_err(corrupt)?;
        let t = ArrayD::from_shape_vec(IxDyn(&dims), data).map_err(corrupt)?;
        tensors.insert(name, t);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(corrupt)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes after the last tensor", rest.len())));
    }
    Ok(Checkpoint {
        params: ModelParams::from_tensors(meta.model, tensors)?,
        iteration: meta.iteration,
    })
}
