//! Single-file checkpoints.
//!
//! Layout: 8-byte magic, little-endian `u32` version, `u64` header length, a
//! JSON header (config, training metadata, parameter table), then the
//! parameters and batch-norm buffers as little-endian `f64`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelParameters, ParamEntry};
use crate::error::{Error, IoContext, Result};

const MAGIC: &[u8; 8] = b"LDCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    /// Epoch (0-based) the parameters were taken from.
    pub epoch: usize,
    pub val_accuracy: f64,
    pub val_loss: f64,
    pub mask_enabled: bool,
    pub mask_probability: f64,
    pub manifest_fingerprint: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    metadata: TrainingMetadata,
    n_params: usize,
    n_buffers: usize,
    entries: Vec<ParamEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub metadata: TrainingMetadata,
}

impl Checkpoint {
    pub fn new(model: Model, metadata: TrainingMetadata) -> Self {
        Self { model, metadata }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            version: CHECKPOINT_VERSION,
            config: self.model.config.clone(),
            metadata: self.metadata.clone(),
            n_params: self.model.params.values.len(),
            n_buffers: self.model.params.buffers.len(),
            entries: self.model.entries().to_vec(),
        };
        let json = serde_json::to_vec(&header)?;
        let p = &self.model.params;
        let mut out = Vec::with_capacity(20 + json.len() + 8 * (p.values.len() + p.buffers.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in p.values.iter().chain(&p.buffers) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |reason: String| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(fail("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(fail(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(20..20usize.saturating_add(hlen))
            .ok_or_else(|| fail("truncated header".into()))?;
        let header: Header =
            serde_json::from_slice(body).map_err(|e| fail(format!("bad header: {e}")))?;
        let data = &bytes[20 + hlen..];
        let n = header.n_params + header.n_buffers;
        if data.len() != 8 * n {
            return Err(fail(format!(
                "expected {} bytes of tensor data, found {}",
                8 * n,
                data.len()
            )));
        }
        let mut floats = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let values: Vec<f64> = floats.by_ref().take(header.n_params).collect();
        let buffers: Vec<f64> = floats.collect();
        let model = Model::from_parts(header.config, ModelParameters { values, buffers })
            .map_err(|e| fail(e.to_string()))?;
        if model.entries() != header.entries.as_slice() {
            return Err(fail("parameter table does not match the config".into()));
        }
        if !model.params.is_finite() {
            return Err(fail("non-finite parameter values".into()));
        }
        Ok(Self {
            model,
            metadata: header.metadata,
        })
    }

    /// Writes atomically via a sibling temp file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).at(dir)?;
        }
        let tmp = path.with_extension("ckpt.tmp");
        {
            let mut f = fs::File::create(&tmp).at(&tmp)?;
            f.write_all(&bytes).at(&tmp)?;
        }
        fs::rename(&tmp, path).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).at(path)?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Checkpoint {
        let model = Model::init(ModelConfig::with_channels([2, 2, 2, 2]), 3).unwrap();
        Checkpoint::new(
            model,
            TrainingMetadata {
                seed: 3,
                epoch: 4,
                val_accuracy: 0.9,
                val_loss: 0.2,
                mask_enabled: true,
                mask_probability: 1.0,
                manifest_fingerprint: "abc".into(),
            },
        )
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = tiny();
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let ck = tiny();
        let p = Path::new("x.ckpt");
        let mut bytes = ck.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8], p).is_err());
        bytes[0] = b'X';
        assert!(Checkpoint::from_bytes(&bytes, p).is_err());
        let mut bytes = ck.to_bytes().unwrap();
        bytes[8] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes, p),
            Err(Error::Checkpoint { .. })
        ));
        assert!(Checkpoint::from_bytes(b"short", p).is_err());
    }
}
