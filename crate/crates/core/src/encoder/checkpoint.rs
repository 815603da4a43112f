//! Binary checkpoint layout, all integers little-endian:
//!
//! ```text
//! "PALM"  u32 version  u32 len + config JSON  u32 len + vocabulary hash
//! u8 finetuned  u32 tensor count
//! per tensor: u32 len + name  u64 rows  u64 cols  rows*cols f32
//! ```

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::params::Params;
use super::{EncoderError, Model, ModelConfig};
use crate::normalizer::Vocabulary;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PALM";
pub const CHECKPOINT_VERSION: u32 = 1;

// Guards against absurd allocations from a corrupt length field.
const MAX_FIELD: u64 = 1 << 31;

fn bad(msg: impl Into<String>) -> EncoderError {
    EncoderError::Checkpoint(msg.into())
}

fn put_bytes<W: Write>(w: &mut W, b: &[u8]) -> std::io::Result<()> {
    w.write_all(&(b.len() as u32).to_le_bytes())?;
    w.write_all(b)
}

pub fn write_checkpoint<W: Write>(w: &mut W, model: &Model<f32>) -> Result<(), EncoderError> {
    let config = serde_json::to_vec(&model.config).map_err(|e| bad(e.to_string()))?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    put_bytes(w, &config)?;
    put_bytes(w, Vocabulary::standard().hash().as_bytes())?;
    w.write_all(&[u8::from(model.finetuned)])?;
    let named = model.params.named();
    w.write_all(&(named.len() as u32).to_le_bytes())?;
    for (name, t) in named {
        put_bytes(w, name.as_bytes())?;
        w.write_all(&(t.nrows() as u64).to_le_bytes())?;
        w.write_all(&(t.ncols() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(t.len() * 4);
        for v in t.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32, EncoderError> {
    let mut b = [0; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64, EncoderError> {
    let mut b = [0; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_bytes<R: Read>(r: &mut R) -> Result<Vec<u8>, EncoderError> {
    let n = get_u32(r)? as usize;
    let mut b = vec![0; n];
    r.read_exact(&mut b)?;
    Ok(b)
}

/// Read a checkpoint, rejecting one built against a different vocabulary.
pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Model<f32>, EncoderError> {
    let mut magic = [0; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = get_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let config: ModelConfig = serde_json::from_slice(&get_bytes(r)?).map_err(|e| bad(e.to_string()))?;
    config.validate()?;
    let hash = get_bytes(r)?;
    let expected = Vocabulary::standard().hash();
    if hash != expected.as_bytes() {
        return Err(bad(format!("vocabulary hash {} != {expected}", String::from_utf8_lossy(&hash))));
    }
    let mut flag = [0; 1];
    r.read_exact(&mut flag)?;
    let finetuned = match flag[0] {
        0 => false,
        1 => true,
        v => return Err(bad(format!("bad finetuned flag {v}"))),
    };

    let mut params = Params::<f32>::zeros(&config);
    let count = get_u32(r)? as usize;
    let mut slots = params.named_mut();
    if count != slots.len() {
        return Err(bad(format!("{count} tensors, expected {}", slots.len())));
    }
    for (name, slot) in slots.iter_mut() {
        let got = get_bytes(r)?;
        if got != name.as_bytes() {
            return Err(bad(format!("tensor {} where {name} was expected", String::from_utf8_lossy(&got))));
        }
        let (rows, cols) = (get_u64(r)?, get_u64(r)?);
        if rows.saturating_mul(cols) > MAX_FIELD || (rows as usize, cols as usize) != slot.dim() {
            return Err(bad(format!("{name} has shape {rows}x{cols}, expected {:?}", slot.dim())));
        }
        let mut raw = vec![0u8; slot.len() * 4];
        r.read_exact(&mut raw)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        **slot = Array2::from_shape_vec(slot.dim(), data).map_err(|e| bad(e.to_string()))?;
    }
    drop(slots);
    if !params.all_finite() {
        return Err(bad("non-finite weights"));
    }
    Model::from_params(config, params, finetuned)
}

pub fn save_checkpoint(path: &Path, model: &Model<f32>) -> Result<(), EncoderError> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, model)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model<f32>, EncoderError> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(&mut bytes.as_slice())
}
