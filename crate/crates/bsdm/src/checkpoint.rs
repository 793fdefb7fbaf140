//! Checkpoints: `<name>.manifest.json` describing every tensor plus
//! `<name>.params.bin` holding the tensors back to back as little-endian `f32`.

use std::fs;
use std::path::{Path, PathBuf};

use bsdm_core::denoiser::{DenoiserConfig, DenoiserParams};
use bsdm_core::diffusion::CubeStats;
use bsdm_core::nn::Parameters;
use bsdm_core::train::{Checkpoint, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::io::{f32_from_le, f32_le_bytes, read_json, strip_suffix, with_suffix, write_json};
use crate::{Error, Result};

pub const MANIFEST_SUFFIX: &str = ".manifest.json";
pub const PARAMS_SUFFIX: &str = ".params.bin";
const FORMAT: &str = "bsdm-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in `f32` elements.
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub denoiser: DenoiserConfig,
    pub train: TrainConfig,
    pub stats: CubeStats,
    pub loss_history: Vec<f64>,
    pub tensors: Vec<TensorEntry>,
    pub total_len: usize,
}

/// Accepts `ckpt`, `ckpt.manifest.json` or `ckpt.params.bin` and returns `ckpt`.
pub fn checkpoint_prefix(path: &Path) -> PathBuf {
    strip_suffix(path, MANIFEST_SUFFIX)
        .or_else(|| strip_suffix(path, PARAMS_SUFFIX))
        .unwrap_or_else(|| path.to_path_buf())
}

pub fn manifest_for(ckpt: &Checkpoint) -> Manifest {
    let mut offset = 0;
    let tensors = ckpt
        .params
        .tensors()
        .into_iter()
        .map(|t| {
            let entry = TensorEntry {
                name: t.name,
                shape: t.shape,
                offset,
                len: t.data.len(),
            };
            offset += entry.len;
            entry
        })
        .collect();
    Manifest {
        format: FORMAT.into(),
        version: VERSION,
        dtype: "f32le".into(),
        denoiser: ckpt.params.config.clone(),
        train: ckpt.config.clone(),
        stats: ckpt.stats,
        loss_history: ckpt.loss_history.clone(),
        tensors,
        total_len: offset,
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let prefix = checkpoint_prefix(path);
    write_json(&with_suffix(&prefix, MANIFEST_SUFFIX), &manifest_for(ckpt))?;
    let blob: Vec<f32> = ckpt
        .params
        .tensors()
        .iter()
        .flat_map(|t| t.data.iter().copied())
        .collect();
    let params_path = with_suffix(&prefix, PARAMS_SUFFIX);
    fs::write(&params_path, f32_le_bytes(blob)).map_err(Error::io(params_path))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let prefix = checkpoint_prefix(path);
    let manifest_path = with_suffix(&prefix, MANIFEST_SUFFIX);
    let manifest: Manifest = read_json(&manifest_path)?;
    let mismatch = |message: String| Error::format(&manifest_path, message);
    if manifest.format != FORMAT || manifest.version != VERSION || manifest.dtype != "f32le" {
        return Err(mismatch(format!(
            "unsupported checkpoint {} v{} ({})",
            manifest.format, manifest.version, manifest.dtype
        )));
    }

    let mut params = DenoiserParams::<f32>::init(manifest.denoiser.clone(), 0)
        .map_err(|e| mismatch(e.to_string()))?;
    let expected: Vec<(String, Vec<usize>)> = params
        .tensors()
        .into_iter()
        .map(|t| (t.name, t.shape))
        .collect();
    if expected.len() != manifest.tensors.len() {
        return Err(mismatch(format!(
            "{} tensors listed, the architecture has {}",
            manifest.tensors.len(),
            expected.len()
        )));
    }
    let mut offset = 0;
    for ((name, shape), entry) in expected.iter().zip(&manifest.tensors) {
        let len: usize = shape.iter().product();
        if *name != entry.name || *shape != entry.shape || entry.offset != offset || entry.len != len {
            return Err(mismatch(format!(
                "tensor {} {:?} at {} does not match {name} {shape:?} at {offset}",
                entry.name, entry.shape, entry.offset
            )));
        }
        offset += len;
    }
    if offset != manifest.total_len {
        return Err(mismatch(format!("total_len {} but tensors sum to {offset}", manifest.total_len)));
    }

    let params_path = with_suffix(&prefix, PARAMS_SUFFIX);
    let bytes = fs::read(&params_path).map_err(Error::io(&params_path))?;
    if bytes.len() != manifest.total_len * 4 {
        return Err(Error::format(
            &params_path,
            format!("expected {} bytes, found {}", manifest.total_len * 4, bytes.len()),
        ));
    }
    let blob = f32_from_le(&bytes);
    for (dst, entry) in params.tensors_mut().into_iter().zip(&manifest.tensors) {
        dst.copy_from_slice(&blob[entry.offset..entry.offset + entry.len]);
    }
    if !params.all_finite() {
        return Err(Error::format(&params_path, "non-finite parameter"));
    }
    Ok(Checkpoint {
        params,
        config: manifest.train,
        stats: manifest.stats,
        loss_history: manifest.loss_history,
    })
}
