//! On-disk dataset container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! bytes 0..8    magic "MOSDAT01"
//! bytes 8..12   u32 header length H
//! bytes 12..12+H  UTF-8 JSON header (config, seed, per-sample metadata)
//! then          payload: n_samples * N * T complex values as f32 pairs
//!               (re, im), sample-major, column-major within each matrix
//! then          n_samples u8 labels
//! ```
//!
//! The payload holds the noiseless signals; SNR lives in the header so a
//! reader can realize noise at the stored or any other level.

use crate::error::{Error, Result};
use crate::sim::{CleanSample, Dataset, ScenarioConfig, SourceScene};
use ndarray::Array2;
use num_complex::Complex;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const DATASET_MAGIC: &[u8; 8] = b"MOSDAT01";

#[derive(Serialize, Deserialize)]
struct SampleMeta {
    label: u8,
    snr_db: f64,
    doas: Vec<f64>,
    powers: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    format: String,
    version: u32,
    dtype: String,
    layout: String,
    signal: String,
    config: ScenarioConfig,
    seed: u64,
    n_samples: usize,
    samples: Vec<SampleMeta>,
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let header = DatasetHeader {
        format: "moselect-dataset".into(),
        version: 1,
        dtype: "complex64le-interleaved".into(),
        layout: "sample-major;column-major".into(),
        signal: "noiseless".into(),
        config: dataset.config.clone(),
        seed: dataset.seed,
        n_samples: dataset.samples.len(),
        samples: dataset
            .samples
            .iter()
            .zip(&dataset.labels)
            .map(|(s, &label)| SampleMeta {
                label,
                snr_db: s.snr_db,
                doas: s.scene.doas.clone(),
                powers: s.scene.source_powers.clone(),
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    let (n, t) = (dataset.config.n_antennas, dataset.config.t_snapshots);
    for sample in &dataset.samples {
        if sample.clean.dim() != (n, t) {
            return Err(Error::dims(format!(
                "sample is {:?}, config says ({n}, {t})",
                sample.clean.dim()
            )));
        }
        for col in 0..t {
            for row in 0..n {
                let v = sample.clean[(row, col)];
                w.write_all(&v.re.to_le_bytes())?;
                w.write_all(&v.im.to_le_bytes())?;
            }
        }
    }
    w.write_all(&dataset.labels)?;
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("file too short for magic".into()))?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            magic, DATASET_MAGIC
        )));
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)
        .map_err(|_| Error::Format("file too short for header length".into()))?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)
        .map_err(|_| Error::Format("truncated header".into()))?;
    let header: DatasetHeader = serde_json::from_slice(&header_bytes)?;
    if header.format != "moselect-dataset" || header.version != 1 {
        return Err(Error::Format(format!(
            "unsupported container {} v{}",
            header.format, header.version
        )));
    }
    header.config.validate()?;
    if header.samples.len() != header.n_samples {
        return Err(Error::Format("sample metadata count mismatch".into()));
    }
    let (n, t) = (header.config.n_antennas, header.config.t_snapshots);
    let mut payload = vec![0u8; header.n_samples * n * t * 8];
    r.read_exact(&mut payload)
        .map_err(|_| Error::Format("truncated payload".into()))?;
    let mut labels = vec![0u8; header.n_samples];
    r.read_exact(&mut labels)
        .map_err(|_| Error::Format("truncated labels".into()))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after labels".into()));
    }

    let mut samples = Vec::with_capacity(header.n_samples);
    let mut off = 0usize;
    for (meta, &label) in header.samples.iter().zip(&labels) {
        if meta.label != label {
            return Err(Error::Format("header/trailer label mismatch".into()));
        }
        let scene = SourceScene::new(meta.doas.clone(), meta.powers.clone())?;
        if scene.model_order() != label as usize {
            return Err(Error::Format("label does not match scene order".into()));
        }
        let mut clean = Array2::<Complex<f32>>::zeros((n, t));
        for col in 0..t {
            for row in 0..n {
                let re = f32::from_le_bytes(payload[off..off + 4].try_into().unwrap());
                let im = f32::from_le_bytes(payload[off + 4..off + 8].try_into().unwrap());
                clean[(row, col)] = Complex::new(re, im);
                off += 8;
            }
        }
        samples.push(CleanSample {
            clean,
            scene,
            snr_db: meta.snr_db,
        });
    }
    Ok(Dataset {
        samples,
        labels,
        config: header.config,
        seed: header.seed,
    })
}
