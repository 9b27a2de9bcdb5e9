//! Checkpoints: one little-endian float32 blob plus a JSON manifest that lists
//! the arrays in blob order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FieldParams, NetConfig};
use crate::error::{Error, Result};
use crate::util::{read_json, write_json};

pub const MANIFEST_FILE: &str = "checkpoint.json";
pub const BLOB_FILE: &str = "params.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub net_config: NetConfig,
    pub step: u64,
    pub stage: String,
    pub inv_std: f64,
    pub rng_state_hash: String,
    /// Hash of the training configuration that produced this checkpoint.
    pub config_hash: String,
    pub arrays: Vec<ArrayEntry>,
    /// Additional trainer state (sampler weights, log offsets).
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub arrays: Vec<(String, Vec<f32>)>,
}

pub fn params_arrays(params: &FieldParams<f32>) -> Vec<(String, Vec<f32>)> {
    params
        .named_tensors()
        .into_iter()
        .map(|(name, t)| (name, t.to_vec()))
        .collect()
}

impl Checkpoint {
    pub fn new(
        params: &FieldParams<f32>,
        step: u64,
        stage: &str,
        rng_state_hash: String,
        config_hash: String,
        mut extra_arrays: Vec<(String, Vec<f32>)>,
        extra: serde_json::Value,
    ) -> Self {
        let mut arrays = params_arrays(params);
        arrays.append(&mut extra_arrays);
        let mut offset = 0;
        let entries = arrays
            .iter()
            .map(|(name, v)| {
                let e = ArrayEntry { name: name.clone(), offset, len: v.len() };
                offset += v.len();
                e
            })
            .collect();
        Checkpoint {
            manifest: CheckpointManifest {
                net_config: params.config.clone(),
                step,
                stage: stage.to_string(),
                inv_std: params.inv_std() as f64,
                rng_state_hash,
                config_hash,
                arrays: entries,
                extra,
            },
            arrays,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut blob = Vec::new();
        for (_, values) in &self.arrays {
            for v in values {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let blob_path = dir.join(BLOB_FILE);
        fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))?;
        write_json(&dir.join(MANIFEST_FILE), &self.manifest)
    }

    pub fn exists(dir: &Path) -> bool {
        dir.join(MANIFEST_FILE).is_file()
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: CheckpointManifest = read_json(&dir.join(MANIFEST_FILE))?;
        let blob_path = dir.join(BLOB_FILE);
        let bytes = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        if bytes.len() % 4 != 0 {
            return Err(Error::Checkpoint(format!("blob length {} is not a multiple of 4", bytes.len())));
        }
        let floats: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let arrays = manifest
            .arrays
            .iter()
            .map(|e| {
                floats
                    .get(e.offset..e.offset + e.len)
                    .map(|s| (e.name.clone(), s.to_vec()))
                    .ok_or_else(|| Error::Checkpoint(format!("array {} exceeds blob", e.name)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Checkpoint { manifest, arrays })
    }

    pub fn array(&self, name: &str) -> Option<&[f32]> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    /// Rebuilds the network parameters stored in this checkpoint.
    pub fn params(&self) -> Result<FieldParams<f32>> {
        let mut params = FieldParams::<f32>::zeros(&self.manifest.net_config)?;
        let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
        for (name, dst) in names.iter().zip(params.tensors_mut()) {
            let src = self
                .array(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing array {name}")))?;
            if src.len() != dst.len() {
                return Err(Error::Checkpoint(format!("array {name}: expected {} values, got {}", dst.len(), src.len())));
            }
            dst.copy_from_slice(src);
        }
        Ok(params)
    }
}
