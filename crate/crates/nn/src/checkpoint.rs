//! Model checkpoints: a JSON manifest next to a little-endian `f64` blob.
//!
//! `save(base)` writes `base.json` and `base.bin`. The blob holds the parameter
//! tensors back to back in manifest order, row-major.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use waydcm_core::{BetaVector, PipelineConfig, Scaler, Variant};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub crate_version: String,
    pub variant: Variant,
    pub model: ModelConfig,
    pub num_alternatives: usize,
    pub t_f: usize,
    pub scaler: Scaler,
    pub pipeline: PipelineConfig,
    pub beta: BetaVector,
    pub config_hash: String,
    pub seed: u64,
    pub params: Vec<ParamEntry>,
}

pub fn manifest_path(base: &Path) -> PathBuf {
    with_suffix(base, "json")
}

pub fn blob_path(base: &Path) -> PathBuf {
    with_suffix(base, "bin")
}

fn with_suffix(base: &Path, ext: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// A trained model with everything needed to run it on new scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub scaler: Scaler,
    pub pipeline: PipelineConfig,
    pub config_hash: String,
    pub seed: u64,
}

impl Checkpoint {
    pub fn manifest(&self) -> Manifest {
        let p = &self.model.params;
        Manifest {
            version: CHECKPOINT_VERSION,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            variant: self.model.variant,
            model: self.model.config,
            num_alternatives: self.model.num_alternatives,
            t_f: self.model.t_f,
            scaler: self.scaler,
            pipeline: self.pipeline,
            beta: self.model.beta(),
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            params: p
                .names
                .iter()
                .zip(&p.values)
                .map(|(name, v)| ParamEntry {
                    name: name.clone(),
                    shape: v.shape(),
                })
                .collect(),
        }
    }

    pub fn save(&self, base: &Path) -> Result<()> {
        if let Some(dir) = base.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut json = serde_json::to_string_pretty(&self.manifest()).expect("manifest serializes");
        json.push('\n');
        let mp = manifest_path(base);
        fs::write(&mp, json).map_err(|e| Error::io(&mp, e))?;
        let mut blob = Vec::with_capacity(8 * self.model.params.num_scalars());
        for v in self.model.params.values.iter().flat_map(|t| &t.data) {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        let bp = blob_path(base);
        fs::write(&bp, blob).map_err(|e| Error::io(&bp, e))
    }

    pub fn load(base: &Path) -> Result<Self> {
        let (manifest, blob) = read_parts(base)?;
        let mut model = Model::new(manifest.variant, manifest.model, manifest.num_alternatives, manifest.t_f, 0);
        load_into(&mut model, &manifest.params, &blob, base)?;
        Ok(Self {
            model,
            scaler: manifest.scaler,
            pipeline: manifest.pipeline,
            config_hash: manifest.config_hash,
            seed: manifest.seed,
        })
    }
}

fn read_parts(base: &Path) -> Result<(Manifest, Vec<u8>)> {
    let mp = manifest_path(base);
    let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: mp.clone(),
        message: e.to_string(),
    })?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            path: mp,
            message: format!("unsupported checkpoint version {}", manifest.version),
        });
    }
    let bp = blob_path(base);
    let blob = fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
    Ok((manifest, blob))
}

fn load_into(model: &mut Model, entries: &[ParamEntry], blob: &[u8], base: &Path) -> Result<()> {
    let total: usize = entries.iter().map(|e| e.shape[0] * e.shape[1]).sum();
    if blob.len() != 8 * total {
        return Err(Error::Format {
            path: blob_path(base),
            message: format!("blob has {} bytes, manifest describes {}", blob.len(), 8 * total),
        });
    }
    let mut values = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let tensors: Vec<Tensor> = entries
        .iter()
        .map(|e| Tensor::from_vec(e.shape[0], e.shape[1], values.by_ref().take(e.shape[0] * e.shape[1]).collect()))
        .collect();
    let names: Vec<String> = entries.iter().map(|e| e.name.clone()).collect();
    model.load_params(&names, tensors).map_err(Error::Mismatch)
}

/// Loads parameters saved under `base` into an existing model, which must have
/// the same parameter names and shapes.
pub fn load_params_into(model: &mut Model, base: &Path) -> Result<()> {
    let (manifest, blob) = read_parts(base)?;
    load_into(model, &manifest.params, &blob, base)
}
