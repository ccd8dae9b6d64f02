//! Single-file parameter store.
//!
//! Layout: the 8-byte magic `MTRK0001`, a little-endian `u64` manifest
//! length, a JSON manifest (`name -> shape, dtype, byte offset` plus free
//! string metadata), then the raw little-endian scalar payload. Offsets are
//! relative to the start of the payload.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DType, Scalar, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MTRK0001";

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    entries: Vec<CheckpointEntry>,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

/// Decoded checkpoint. Tensors are widened to `f64`; use [`Tensor::cast`]
/// for the working precision.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub entries: Vec<CheckpointEntry>,
    pub tensors: BTreeMap<String, Tensor<f64>>,
    pub meta: BTreeMap<String, String>,
}

pub fn write_checkpoint<F: Scalar>(
    path: impl AsRef<Path>,
    tensors: &[(&str, &Tensor<F>)],
    meta: &BTreeMap<String, String>,
) -> Result<()> {
    let mut payload = Vec::new();
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        if entries.iter().any(|e: &CheckpointEntry| e.name == *name) {
            return Err(Error::invalid(format!("duplicate checkpoint key {name}")));
        }
        entries.push(CheckpointEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            dtype: F::DTYPE,
            offset: payload.len() as u64,
        });
        for v in t.data() {
            v.write_le(&mut payload);
        }
    }
    let manifest = serde_json::to_vec(&Manifest {
        entries,
        meta: meta.clone(),
    })?;
    let mut file = fs::File::create(path)?;
    file.write_all(CHECKPOINT_MAGIC)?;
    file.write_all(&(manifest.len() as u64).to_le_bytes())?;
    file.write_all(&manifest)?;
    file.write_all(&payload)?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    decode(&bytes)
}

fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::format("checkpoint", "missing MTRK0001 header"));
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let payload_start = 16usize
        .checked_add(mlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::format("checkpoint", "manifest length exceeds file"))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[16..payload_start])?;
    let payload = &bytes[payload_start..];

    let mut tensors = BTreeMap::new();
    for e in &manifest.entries {
        let numel: usize = e.shape.iter().product();
        let size = e.dtype.size();
        let start = e.offset as usize;
        let end = start + numel * size;
        if end > payload.len() {
            return Err(Error::format(
                "checkpoint",
                format!("tensor {} runs past end of payload", e.name),
            ));
        }
        let raw = &payload[start..end];
        let data: Vec<f64> = match e.dtype {
            DType::F32 => raw.chunks_exact(4).map(|c| f32::read_le(c) as f64).collect(),
            DType::F64 => raw.chunks_exact(8).map(f64::read_le).collect(),
        };
        tensors.insert(e.name.clone(), Tensor::new(&e.shape, data)?);
    }
    Ok(Checkpoint {
        entries: manifest.entries,
        tensors,
        meta: manifest.meta,
    })
}
