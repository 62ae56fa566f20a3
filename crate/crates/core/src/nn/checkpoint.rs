//! Checkpoint files: a little-endian u32 header length, a JSON header with
//! the model config, epoch, metrics and a tensor manifest, then every
//! tensor as binary32 little-endian in declaration order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::model::{ModelConfig, NetworkParams};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the data section.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub epoch: usize,
    #[serde(default)]
    pub metrics: Value,
    pub manifest: Vec<ManifestEntry>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub epoch: usize,
    pub metrics: Value,
    pub params: NetworkParams,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut manifest = Vec::new();
        let mut data = Vec::new();
        for (name, p, _) in self.params.tensors() {
            manifest.push(ManifestEntry {
                name,
                shape: p.shape.clone(),
                offset: data.len(),
            });
            for &v in &p.data {
                data.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let header = CheckpointHeader {
            config: self.config.clone(),
            epoch: self.epoch,
            metrics: self.metrics.clone(),
            manifest,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(4 + json.len() + data.len());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&data);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 4 {
            return Err(bad("file shorter than header length"));
        }
        let hlen = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
        let data_start = 4usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("header extends past end of file"))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[4..data_start])?;
        let data = &bytes[data_start..];
        // Rebuild the parameter structure from the config, then fill it.
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut params = NetworkParams::init(&header.config, &mut rng)?;
        {
            let tensors = params.tensors_mut();
            if tensors.len() != header.manifest.len() {
                return Err(bad("manifest does not match model config"));
            }
            for ((name, p, _), entry) in tensors.into_iter().zip(&header.manifest) {
                if name != entry.name || p.shape != entry.shape {
                    return Err(Error::Checkpoint(format!("tensor {} does not match manifest", entry.name)));
                }
                let end = entry.offset + 4 * p.data.len();
                if end > data.len() {
                    return Err(Error::Checkpoint(format!("tensor {} is truncated", entry.name)));
                }
                for (v, chunk) in p.data.iter_mut().zip(data[entry.offset..end].chunks_exact(4)) {
                    *v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
                }
            }
        }
        Ok(Self {
            config: header.config,
            epoch: header.epoch,
            metrics: header.metrics,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let config = ModelConfig {
            n_blocks: 2,
            input_size: 16,
            ..ModelConfig::default()
        };
        let params = NetworkParams::init(&config, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        Checkpoint {
            config,
            epoch: 3,
            metrics: serde_json::json!({"val_f1": 0.5}),
            params,
        }
    }

    #[test]
    fn round_trip_to_binary32() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back.config, ck.config);
        assert_eq!(back.epoch, 3);
        for ((_, a, _), (_, b, _)) in ck.params.tensors().into_iter().zip(back.params.tensors()) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
    }

    #[test]
    fn truncated_file_rejected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 4]).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..2]).is_err());
    }
}
