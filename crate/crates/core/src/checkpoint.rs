//! Model checkpoints.
//!
//! A checkpoint is a directory with `model.json` (configs, parameter shapes,
//! item and category ids) and `params.bin` (all parameters as little-endian
//! f64, in store order). The model hash is the SHA-256 of both files' bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::denoiser::{Denoiser, DenoiserConfig};
use crate::error::{ensure, Error, Result};
use crate::nnet::{ParamShape, ParamStore};
use crate::schedule::{NoiseSchedule, ScheduleParams};
use crate::training::TrainConfig;

pub const MANIFEST_FILE: &str = "model.json";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub denoiser: DenoiserConfig,
    pub schedule: ScheduleParams,
    pub train: Option<TrainConfig>,
    pub shapes: Vec<ParamShape>,
    pub item_ids: Vec<String>,
    pub category_names: Vec<String>,
    /// Epoch (1-based) the parameters come from; 0 for an untrained model.
    pub epoch: usize,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub model: Denoiser,
}

impl Checkpoint {
    pub fn new(
        model: Denoiser,
        schedule: ScheduleParams,
        train: Option<TrainConfig>,
        item_ids: Vec<String>,
        category_names: Vec<String>,
        epoch: usize,
    ) -> Result<Self> {
        let cfg = model.config();
        ensure!(
            item_ids.len() == cfg.n_items && category_names.len() == cfg.n_categories,
            Contract,
            "checkpoint ids ({} items, {} categories) disagree with the model ({}, {})",
            item_ids.len(),
            category_names.len(),
            cfg.n_items,
            cfg.n_categories
        );
        NoiseSchedule::new(schedule)?;
        Ok(Self {
            manifest: CheckpointManifest {
                format_version: 1,
                denoiser: *cfg,
                schedule,
                train,
                shapes: model.params.shapes(),
                item_ids,
                category_names,
                epoch,
            },
            model,
        })
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.manifest.schedule)
    }

    fn encode(&self) -> Result<(Vec<u8>, Vec<u8>)> {
        let manifest = serde_json::to_vec_pretty(&self.manifest)?;
        let params: Vec<u8> = self.model.params.flatten().iter().flat_map(|v| v.to_le_bytes()).collect();
        Ok((manifest, params))
    }

    /// Hex SHA-256 over the serialized manifest and parameter bytes.
    pub fn model_hash(&self) -> Result<String> {
        let (m, p) = self.encode()?;
        Ok(hash_bytes(&m, &p))
    }

    pub fn save(&self, dir: &Path) -> Result<String> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (m, p) = self.encode()?;
        let mp = dir.join(MANIFEST_FILE);
        fs::write(&mp, &m).map_err(|e| Error::io(&mp, e))?;
        let pp = dir.join(PARAMS_FILE);
        fs::write(&pp, &p).map_err(|e| Error::io(&pp, e))?;
        Ok(hash_bytes(&m, &p))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mp = dir.join(MANIFEST_FILE);
        let m = fs::read(&mp).map_err(|e| Error::io(&mp, e))?;
        let manifest: CheckpointManifest = serde_json::from_slice(&m)?;
        ensure!(manifest.format_version == 1, Data, "unsupported checkpoint format {}", manifest.format_version);
        let pp = dir.join(PARAMS_FILE);
        let p = fs::read(&pp).map_err(|e| Error::io(&pp, e))?;
        ensure!(p.len() % 8 == 0, Data, "{} is not a whole number of f64 values", pp.display());
        let flat: Vec<f64> = p.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let store = ParamStore::from_flat(&manifest.shapes, &flat)?;
        let model = Denoiser::from_params(manifest.denoiser, store)?;
        NoiseSchedule::new(manifest.schedule)?;
        Ok(Self { manifest, model })
    }
}

fn hash_bytes(manifest: &[u8], params: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(manifest);
    h.update(params);
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Checkpoint {
        let cfg = DenoiserConfig { n_items: 5, n_categories: 2, hidden: 4, latent: 3, step_embed_dim: 2, cond_embed_dim: 2, dropout: 0.1 };
        let model = Denoiser::init(cfg, 3).unwrap();
        let sched = ScheduleParams { steps: 4, noise_scale: 0.1, noise_min: 0.01, noise_max: 0.1 };
        Checkpoint::new(
            model,
            sched,
            Some(TrainConfig::default()),
            (0..5).map(|i| format!("i{i}")).collect(),
            vec!["a".into(), "b".into()],
            0,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_preserves_bits_and_hash() {
        let dir = tempfile::tempdir().unwrap();
        let ck = tiny();
        let h = ck.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back.manifest, ck.manifest);
        assert_eq!(back.model.params.flatten(), ck.model.params.flatten());
        assert_eq!(back.model_hash().unwrap(), h);
        assert_eq!(h.len(), 64);
    }

    #[test]
    fn truncated_params_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        tiny().save(dir.path()).unwrap();
        let p = dir.path().join(PARAMS_FILE);
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 8]).unwrap();
        assert!(Checkpoint::load(dir.path()).is_err());
    }

    #[test]
    fn mismatched_ids_are_rejected() {
        let ck = tiny();
        let sched = ck.manifest.schedule;
        assert!(Checkpoint::new(ck.model, sched, None, vec!["x".into()], vec!["a".into(), "b".into()], 0).is_err());
    }
}
