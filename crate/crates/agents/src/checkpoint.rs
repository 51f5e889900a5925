//! Versioned checkpoint: JSON manifest plus a raw little-endian f32 blob.
//!
//! The manifest references each named parameter block by byte offset and
//! length, so loading reproduces every tensor bit-exactly and other tooling
//! can read the blob without this crate.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use diffcore::{ParamStore32, Real, Tensor32};

use crate::error::{AgentError, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct BlockRef {
    store: String,
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    algorithm: String,
    step_count: u64,
    config: serde_json::Value,
    blob: String,
    blocks: Vec<BlockRef>,
}

/// In-memory checkpoint. Stores keep their insertion order so byte layout is
/// deterministic.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub algorithm: String,
    pub step_count: u64,
    pub config: serde_json::Value,
    stores: Vec<(String, ParamStore32)>,
}

impl Checkpoint {
    pub fn new(algorithm: &str, step_count: u64, config: serde_json::Value) -> Self {
        Checkpoint {
            algorithm: algorithm.to_string(),
            step_count,
            config,
            stores: Vec::new(),
        }
    }

    pub fn add_store(&mut self, name: &str, store: ParamStore32) {
        self.stores.push((name.to_string(), store));
    }

    pub fn store(&self, name: &str) -> Result<&ParamStore32> {
        self.stores
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
            .ok_or_else(|| AgentError::Checkpoint(format!("missing store '{name}'")))
    }

    pub fn store_names(&self) -> Vec<&str> {
        self.stores.iter().map(|(n, _)| n.as_str()).collect()
    }

    /// Combined checksum over every parameter store.
    pub fn params_checksum(&self) -> u64 {
        let mut h: u64 = 0;
        for (_, s) in &self.stores {
            h ^= s.checksum().rotate_left(17);
        }
        h
    }

    /// Write `<path>.json` and `<path>.bin`.
    pub fn save(&self, path_stem: &Path) -> Result<PathBuf> {
        let mut blob: Vec<u8> = Vec::new();
        let mut blocks = Vec::new();
        for (store_name, store) in &self.stores {
            for (name, tensor) in store.iter() {
                let offset = blob.len();
                for v in tensor.data() {
                    blob.extend_from_slice(&v.to_le_bytes());
                }
                blocks.push(BlockRef {
                    store: store_name.clone(),
                    name: name.to_string(),
                    shape: tensor.shape().to_vec(),
                    offset,
                    len: blob.len() - offset,
                });
            }
        }
        let bin_path = path_stem.with_extension("bin");
        let json_path = path_stem.with_extension("json");
        let manifest = Manifest {
            version: CHECKPOINT_VERSION,
            algorithm: self.algorithm.clone(),
            step_count: self.step_count,
            config: self.config.clone(),
            blob: bin_path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            blocks,
        };
        fs::write(&bin_path, &blob)?;
        fs::write(&json_path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(json_path)
    }

    /// Load from the manifest path written by [`Checkpoint::save`].
    pub fn load(json_path: &Path) -> Result<Checkpoint> {
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(json_path)?)?;
        if manifest.version != CHECKPOINT_VERSION {
            return Err(AgentError::Checkpoint(format!(
                "version mismatch: file has {}, supported {CHECKPOINT_VERSION}",
                manifest.version
            )));
        }
        let blob_path = json_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&manifest.blob);
        let blob = fs::read(&blob_path)?;
        let mut stores: Vec<(String, ParamStore32)> = Vec::new();
        for block in &manifest.blocks {
            let numel: usize = block.shape.iter().product();
            if block.len != numel * std::mem::size_of::<Real>() {
                return Err(AgentError::Checkpoint(format!(
                    "block '{}' length {} does not match shape {:?}",
                    block.name, block.len, block.shape
                )));
            }
            let end = block.offset + block.len;
            if end > blob.len() {
                return Err(AgentError::Checkpoint(format!(
                    "block '{}' extends past blob ({} > {})",
                    block.name,
                    end,
                    blob.len()
                )));
            }
            let data: Vec<Real> = blob[block.offset..end]
                .chunks_exact(4)
                .map(|b| Real::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let tensor = Tensor32::from_vec(&block.shape, data)
                .map_err(|e| AgentError::Checkpoint(e.to_string()))?;
            match stores.iter_mut().find(|(n, _)| *n == block.store) {
                Some((_, s)) => s.insert(block.name.clone(), tensor),
                None => {
                    let mut s = ParamStore32::new();
                    s.insert(block.name.clone(), tensor);
                    stores.push((block.store.clone(), s));
                }
            }
        }
        Ok(Checkpoint {
            algorithm: manifest.algorithm,
            step_count: manifest.step_count,
            config: manifest.config,
            stores,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use diffcore::rng::Seeder;

    fn sample_checkpoint() -> Checkpoint {
        let mut rng = Seeder::new(1).stream("ckpt");
        let mut store = ParamStore32::new();
        let data: Vec<Real> = (0..12).map(|_| rng.normal() as Real).collect();
        store.insert("net.w0", Tensor32::from_vec(&[3, 4], data).unwrap());
        store.insert("net.b0", Tensor32::zeros(&[3]));
        let mut ck = Checkpoint::new("sac", 1234, serde_json::json!({"gamma": 0.99}));
        ck.add_store("actor", store);
        ck
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = std::env::temp_dir().join("agents_ckpt_test");
        fs::create_dir_all(&dir).unwrap();
        let ck = sample_checkpoint();
        let path = ck.save(&dir.join("model")).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.algorithm, "sac");
        assert_eq!(loaded.step_count, 1234);
        assert_eq!(loaded.params_checksum(), ck.params_checksum());
        let orig = ck.store("actor").unwrap();
        let got = loaded.store("actor").unwrap();
        for ((n1, t1), (n2, t2)) in orig.iter().zip(got.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.data(), t2.data());
        }
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn version_mismatch_rejected() {
        let dir = std::env::temp_dir().join("agents_ckpt_ver_test");
        fs::create_dir_all(&dir).unwrap();
        let path = sample_checkpoint().save(&dir.join("model")).unwrap();
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace("\"version\": 1", "\"version\": 99");
        fs::write(&path, text).unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert!(err.to_string().contains("version mismatch"));
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn corrupt_shape_rejected() {
        let dir = std::env::temp_dir().join("agents_ckpt_shape_test");
        fs::create_dir_all(&dir).unwrap();
        let path = sample_checkpoint().save(&dir.join("model")).unwrap();
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace("[\n        3,\n        4\n      ]", "[\n        3,\n        5\n      ]");
        fs::write(&path, text).unwrap();
        assert!(Checkpoint::load(&path).is_err());
        fs::remove_dir_all(&dir).ok();
    }
}
