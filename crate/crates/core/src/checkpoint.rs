//! Versioned checkpoint container.
//!
//! Layout: 4-byte magic, little-endian `u32` format version, `u64` header
//! length, a JSON header (full model config including the band layout and
//! compression exponent, tensor directory, optional trainer state), then the
//! raw tensor data as little-endian `f64`. Loading validates every tensor
//! name and shape against a freshly built model for the stored config.

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::optim::PlateauSchedule;
use crate::wav::atomic_write;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

const MAGIC: &[u8; 4] = b"SEDN";
const FORMAT_VERSION: u32 = 1;

/// Optimizer/schedule state carried alongside the parameters so interrupted
/// runs resume with the exact learning-rate trajectory.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainerMeta {
    pub schedule: PlateauSchedule,
    pub adam_step: u64,
    pub global_step: usize,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    /// Explicit band widths, alongside the scheme name in `config`, so a
    /// checkpoint never depends on scheme defaults staying put.
    band_widths: Vec<usize>,
    tensors: Vec<TensorEntry>,
    trainer: Option<TrainerMeta>,
}

/// Fully decoded checkpoint.
#[derive(Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub tensors: Vec<(String, Vec<usize>, Vec<f64>)>,
    pub trainer: Option<TrainerMeta>,
}

/// Serializes named tensors with the config; written atomically.
pub fn save(
    path: &Path,
    config: &ModelConfig,
    tensors: &[(String, Vec<usize>, Vec<f64>)],
    trainer: Option<&TrainerMeta>,
) -> Result<()> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for (name, shape, data) in tensors {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {name}: shape {shape:?} does not match data length {}",
                data.len()
            )));
        }
        entries.push(TensorEntry {
            name: name.clone(),
            shape: shape.clone(),
            offset,
            len: data.len() as u64,
        });
        offset += data.len() as u64;
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        config: config.clone(),
        band_widths: config.layout().map(|l| l.widths).unwrap_or_default(),
        tensors: entries,
        trainer: trainer.cloned(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut bytes =
        Vec::with_capacity(16 + header_json.len() + (offset as usize) * 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for (_, _, data) in tensors {
        for v in data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    atomic_write(path, &bytes)
}

/// Convenience: snapshot a model's parameters (optionally with trainer state).
pub fn save_model(path: &Path, model: &Model, trainer: Option<&TrainerMeta>) -> Result<()> {
    let tensors: Vec<(String, Vec<usize>, Vec<f64>)> = model
        .params()
        .iter()
        .map(|(name, t)| (name.clone(), t.shape().to_vec(), t.to_vec()))
        .collect();
    save(path, &model.config, &tensors, trainer)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if bytes.len() < 16 || &bytes[0..4] != MAGIC {
        return Err(Error::Checkpoint(format!("{}: not a checkpoint file", path.display())));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint format version {version} (supported: {FORMAT_VERSION})"
        )));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header_end = 16 + header_len;
    if bytes.len() < header_end {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| Error::Checkpoint(format!("corrupt header: {e}")))?;
    let expected_widths = header.config.layout()?.widths;
    if header.band_widths != expected_widths {
        return Err(Error::Checkpoint(format!(
            "band layout mismatch: file stores widths {:?} but scheme '{}' now yields {:?}",
            header.band_widths, header.config.band_scheme, expected_widths
        )));
    }
    let data = &bytes[header_end..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let start = (entry.offset as usize) * 8;
        let end = start + (entry.len as usize) * 8;
        if end > data.len() {
            return Err(Error::Checkpoint(format!("tensor {} overruns data section", entry.name)));
        }
        let vals: Vec<f64> = data[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((entry.name.clone(), entry.shape.clone(), vals));
    }
    Ok(Checkpoint { config: header.config, tensors, trainer: header.trainer })
}

/// Copies checkpoint tensors into an existing model, insisting on an exact
/// match of parameter names and shapes.
pub fn load_into_model(ckpt: &Checkpoint, model: &Model) -> Result<()> {
    let params = model.params();
    for (name, t) in &params {
        let found = ckpt
            .tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if found.1 != t.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {name}: shape {:?} in file, model expects {:?}",
                found.1,
                t.shape()
            )));
        }
        t.data_mut().copy_from_slice(&found.2);
    }
    Ok(())
}

/// Builds a model from a checkpoint file.
pub fn load_model(path: &Path) -> Result<(Model, Option<TrainerMeta>)> {
    let ckpt = load(path)?;
    let model = Model::new(&ckpt.config, 0)?;
    load_into_model(&ckpt, &model)?;
    Ok((model, ckpt.trainer))
}
