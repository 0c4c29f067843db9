//! Shared checkpoint container for trained models.
//!
//! Layout, integers little-endian:
//!
//! ```text
//! bytes 0..8   magic "MOSCKPT1"
//! bytes 8..12  u32 header length H
//! bytes 12..12+H  UTF-8 JSON header: format, version, kind, model metadata,
//!                 and the tensor directory (name + shape, in payload order)
//! then         payload: all tensors as f32 little-endian, concatenated in
//!              directory order, row-major
//! ```

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MOSCKPT1";

#[derive(Serialize, Deserialize)]
struct TensorDirEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    version: u32,
    kind: String,
    meta: Value,
    tensors: Vec<TensorDirEntry>,
}

/// A checkpoint in memory: model kind, JSON metadata, and named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorBundle {
    pub kind: String,
    pub meta: Value,
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

pub fn write_bundle(bundle: &TensorBundle, path: &Path) -> Result<()> {
    let header = CheckpointHeader {
        format: "moselect-checkpoint".into(),
        version: 1,
        kind: bundle.kind.clone(),
        meta: bundle.meta.clone(),
        tensors: bundle
            .tensors
            .iter()
            .map(|(name, shape, data)| {
                assert_eq!(shape.iter().product::<usize>(), data.len());
                TensorDirEntry {
                    name: name.clone(),
                    shape: shape.clone(),
                }
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for (_, _, data) in &bundle.tensors {
        for v in data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_bundle(path: &Path) -> Result<TensorBundle> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("file too short for magic".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            magic, CHECKPOINT_MAGIC
        )));
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)
        .map_err(|_| Error::Format("file too short for header length".into()))?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)
        .map_err(|_| Error::Format("truncated header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)?;
    if header.format != "moselect-checkpoint" || header.version != 1 {
        return Err(Error::Format(format!(
            "unsupported container {} v{}",
            header.format, header.version
        )));
    }
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        let mut buf = vec![0u8; n * 4];
        r.read_exact(&mut buf)
            .map_err(|_| Error::Format(format!("truncated payload at tensor {}", entry.name)))?;
        let data: Vec<f32> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((entry.name.clone(), entry.shape.clone(), data));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    Ok(TensorBundle {
        kind: header.kind,
        meta: header.meta,
        tensors,
    })
}
