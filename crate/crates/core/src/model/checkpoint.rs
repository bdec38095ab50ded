//! Binary checkpoint layout (all integers little-endian):
//!
//! ```text
//! b"CODCL1"
//! u32 tensor count
//! per tensor: u32 name length, UTF-8 name, u32 rank, rank x u64 dims, f64 data
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::error::{CodclError, Result};
use crate::scalar::Scalar;

use super::params::{ModelParameters, Tensor};

pub const MAGIC: &[u8; 6] = b"CODCL1";

/// Upper bound on any single length field, to reject corrupt headers before allocating.
const MAX_LEN: u64 = 1 << 32;

pub fn write_checkpoint<T: Scalar, W: Write>(params: &ModelParameters<T>, mut w: W) -> Result<()> {
    let tensors = params.tensors();
    w.write_all(MAGIC)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for d in &t.shape {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        for x in &t.data {
            w.write_all(&x.as_f64().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint<T: Scalar, R: Read>(mut r: R) -> Result<ModelParameters<T>> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)
        .map_err(|_| CodclError::Checkpoint("file too short".into()))?;
    if &magic != MAGIC {
        return Err(CodclError::Checkpoint("bad magic; not a checkpoint".into()));
    }
    let count = read_u32(&mut r)?;
    let mut named = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = read_u32(&mut r)?;
        if u64::from(len) > 256 {
            return Err(CodclError::Checkpoint("tensor name too long".into()));
        }
        let mut name = vec![0u8; len as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| CodclError::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)?;
        if rank > 8 {
            return Err(CodclError::Checkpoint(format!("tensor `{name}` has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut size: u64 = 1;
        for _ in 0..rank {
            let d = read_u64(&mut r)?;
            size = size.saturating_mul(d);
            shape.push(d as usize);
        }
        if size > MAX_LEN {
            return Err(CodclError::Checkpoint(format!("tensor `{name}` is implausibly large")));
        }
        let mut data = Vec::with_capacity(size as usize);
        for _ in 0..size {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            let x = f64::from_le_bytes(b);
            if !x.is_finite() {
                return Err(CodclError::Checkpoint(format!("tensor `{name}` holds a non-finite value")));
            }
            data.push(T::lit(x));
        }
        named.push((name, Tensor { shape, data }));
    }
    ModelParameters::from_named(named)
}

pub fn save_checkpoint<T: Scalar>(params: &ModelParameters<T>, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(params, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<ModelParameters<T>> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

fn nested(t: &Tensor<impl Scalar>) -> Value {
    let flat: Vec<f64> = t.data.iter().map(|x| x.as_f64()).collect();
    match t.shape.as_slice() {
        [_, cols] if *cols > 0 => Value::Array(flat.chunks(*cols).map(|r| json!(r)).collect()),
        _ => json!(flat),
    }
}

/// Parameters as a JSON object of nested arrays keyed by tensor name.
pub fn export_json<T: Scalar>(params: &ModelParameters<T>) -> Value {
    let mut map = Map::new();
    for (name, t) in params.tensors() {
        map.insert(name.to_string(), nested(t));
    }
    Value::Object(map)
}
