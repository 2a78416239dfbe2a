//! Checkpoints: `checkpoint.json` next to a raw little-endian `params.f64`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::{ChannelStats, ClassifierParams, ParamBuffer, ParamId};
use crate::error::{Error, Result};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const PARAMS_FILE: &str = "params.f64";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub config: ModelConfig,
    pub stats: ChannelStats,
    pub seed: u64,
    pub epoch: usize,
    pub params_file: String,
    pub byte_order: String,
    pub n_params: usize,
    pub layout: Vec<ParamEntry>,
}

pub fn save_checkpoint(
    params: &ClassifierParams,
    seed: u64,
    epoch: usize,
    dir: &Path,
) -> Result<()> {
    params.check_finite()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let layout = ParamId::ALL
        .iter()
        .map(|&id| {
            let (r, c) = params.weights.layout.shape(id);
            ParamEntry {
                name: id.name().to_string(),
                offset: params.weights.layout.range(id).start,
                shape: [r, c],
            }
        })
        .collect();
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_VERSION,
        config: params.config.clone(),
        stats: params.stats.clone(),
        seed,
        epoch,
        params_file: PARAMS_FILE.to_string(),
        byte_order: "little".to_string(),
        n_params: params.n_params(),
        layout,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse {
        what: "checkpoint manifest".into(),
        detail: e.to_string(),
    })?;
    let path = dir.join(CHECKPOINT_FILE);
    fs::write(&path, json + "\n").map_err(|e| Error::io(path, e))?;

    let bytes: Vec<u8> = params
        .weights
        .values
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect();
    let path = dir.join(PARAMS_FILE);
    fs::write(&path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<(ClassifierParams, CheckpointManifest)> {
    let path = dir.join(CHECKPOINT_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        what: "checkpoint manifest".into(),
        detail: e.to_string(),
    })?;
    if manifest.format_version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(manifest.format_version));
    }
    if manifest.byte_order != "little" {
        return Err(Error::Parse {
            what: "checkpoint manifest".into(),
            detail: format!("byte_order `{}`", manifest.byte_order),
        });
    }
    manifest.config.validate()?;
    let mut weights = ParamBuffer::zeros(&manifest.config);
    if manifest.n_params != weights.values.len() {
        return Err(Error::Invariant(format!(
            "checkpoint declares {} parameters, config implies {}",
            manifest.n_params,
            weights.values.len()
        )));
    }
    let c = manifest.config.in_channels;
    if manifest.stats.mean.len() != c || manifest.stats.std.len() != c {
        return Err(Error::Invariant(
            "standardization statistics do not match channel count".into(),
        ));
    }
    let path = dir.join(&manifest.params_file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let expected = weights.values.len() * 8;
    if bytes.len() != expected {
        return Err(Error::ByteLength {
            array: manifest.params_file.clone(),
            expected: expected as u64,
            actual: bytes.len() as u64,
        });
    }
    for (v, chunk) in weights.values.iter_mut().zip(bytes.chunks_exact(8)) {
        *v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
    }
    let params = ClassifierParams {
        config: manifest.config.clone(),
        weights,
        stats: manifest.stats.clone(),
    };
    params.check_finite()?;
    Ok((params, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut cfg = ModelConfig::new(4, 3);
        cfg.d_model = 16;
        cfg.n_head = 4;
        cfg.mlp_hidden = 8;
        let mut params = ClassifierParams::init(&cfg, 5).unwrap();
        params.stats = ChannelStats {
            mean: vec![0.1, 0.2, 0.3, 0.4],
            std: vec![1.5, 0.5, 0.25, 2.0],
        };
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&params, 5, 7, dir.path()).unwrap();
        let (back, manifest) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back, params);
        assert_eq!((manifest.seed, manifest.epoch), (5, 7));
    }

    #[test]
    fn truncated_params_rejected() {
        let mut cfg = ModelConfig::new(2, 2);
        cfg.d_model = 8;
        cfg.n_head = 2;
        let params = ClassifierParams::init(&cfg, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&params, 1, 1, dir.path()).unwrap();
        let p = dir.path().join(PARAMS_FILE);
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(
            load_checkpoint(dir.path()),
            Err(Error::ByteLength { .. })
        ));
    }
}
