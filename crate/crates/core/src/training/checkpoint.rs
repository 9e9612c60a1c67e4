//! Binary checkpoint container.
//!
//! Layout:
//!
//! ```text
//! bytes 0..8    magic "GDFCKPT1"
//! bytes 8..16   manifest length M, u64 little-endian
//! bytes 16..16+M  JSON manifest
//! rest          payload: raw little-endian f64 values
//! ```
//!
//! Every tensor entry in the manifest records its name, group (`param`,
//! `adam_m` or `adam_v`), shape, dtype (`f64le`) and the element offset and
//! count inside the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{Gdformer, ModelConfig};
use crate::numerics::{AdamConfig, AdamState, Rng, Tensor};

use super::{EpochLoss, TrainConfig};

pub const MAGIC: &[u8; 8] = b"GDFCKPT1";
const HEADER_LEN: usize = 16;

#[derive(Debug, PartialEq, thiserror::Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(String),
    #[error("corrupt checkpoint manifest: {0}")]
    CorruptManifest(String),
    #[error("checkpoint truncated: need {expected} bytes, file has {found}")]
    Truncated { expected: usize, found: usize },
    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

/// Everything needed to rebuild a model and continue training exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub params: Vec<(String, Tensor)>,
    pub optimizer: Option<AdamState>,
    pub rng: Option<Rng>,
    pub history: Vec<EpochLoss>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    group: String,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct OptimizerEntry {
    config: AdamConfig,
    step: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    model: ModelConfig,
    train: TrainConfig,
    epoch: usize,
    rng: Option<Rng>,
    optimizer: Option<OptimizerEntry>,
    history: Vec<EpochLoss>,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Rebuilds the model, checking every tensor against the config's
    /// parameter layout.
    pub fn build_model(&self) -> Result<Gdformer, CheckpointError> {
        let skeleton = Gdformer::init(self.model.clone(), 0)
            .map_err(|e| CheckpointError::CorruptManifest(e.to_string()))?;
        let specs = skeleton.params().specs();
        if specs.len() != self.params.len() {
            return Err(CheckpointError::CorruptManifest(format!(
                "config needs {} tensors, checkpoint has {}",
                specs.len(),
                self.params.len()
            )));
        }
        let mut tensors = Vec::with_capacity(specs.len());
        for (spec, (name, t)) in specs.iter().zip(&self.params) {
            if &spec.name != name {
                return Err(CheckpointError::CorruptManifest(format!(
                    "expected tensor {}, found {name}",
                    spec.name
                )));
            }
            if spec.shape != t.shape() {
                return Err(CheckpointError::ShapeMismatch {
                    name: name.clone(),
                    expected: spec.shape.clone(),
                    found: t.shape().to_vec(),
                });
            }
            tensors.push(t.clone());
        }
        Gdformer::from_tensors(self.model.clone(), tensors)
            .map_err(|e| CheckpointError::CorruptManifest(e.to_string()))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CheckpointError> {
        let mut entries = Vec::new();
        let mut payload: Vec<f64> = Vec::new();
        let mut push = |name: &str, group: &str, t: &Tensor| {
            entries.push(TensorEntry {
                name: name.to_owned(),
                group: group.to_owned(),
                shape: t.shape().to_vec(),
                dtype: "f64le".into(),
                offset: payload.len(),
                len: t.numel(),
            });
            payload.extend_from_slice(t.data());
        };
        for (name, t) in &self.params {
            push(name, "param", t);
        }
        if let Some(opt) = &self.optimizer {
            for ((name, _), m) in self.params.iter().zip(&opt.first_moment) {
                push(name, "adam_m", m);
            }
            for ((name, _), v) in self.params.iter().zip(&opt.second_moment) {
                push(name, "adam_v", v);
            }
        }
        let manifest = Manifest {
            format_version: 1,
            model: self.model.clone(),
            train: self.train.clone(),
            epoch: self.epoch,
            rng: self.rng.clone(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerEntry {
                config: o.config,
                step: o.step,
            }),
            history: self.history.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| CheckpointError::CorruptManifest(e.to_string()))?;
        let mut out = Vec::with_capacity(HEADER_LEN + json.len() + payload.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < HEADER_LEN {
            if bytes.len() >= MAGIC.len() && &bytes[..MAGIC.len()] != MAGIC {
                return Err(CheckpointError::CorruptManifest("bad magic".into()));
            }
            return Err(CheckpointError::Truncated {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        if &bytes[..8] != MAGIC {
            return Err(CheckpointError::CorruptManifest("bad magic".into()));
        }
        let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let payload_start = HEADER_LEN
            .checked_add(mlen)
            .ok_or_else(|| CheckpointError::CorruptManifest("manifest length overflows".into()))?;
        if bytes.len() < payload_start {
            return Err(CheckpointError::Truncated {
                expected: payload_start,
                found: bytes.len(),
            });
        }
        let manifest: Manifest = serde_json::from_slice(&bytes[HEADER_LEN..payload_start])
            .map_err(|e| CheckpointError::CorruptManifest(e.to_string()))?;
        if manifest.format_version != 1 {
            return Err(CheckpointError::CorruptManifest(format!(
                "unsupported format version {}",
                manifest.format_version
            )));
        }

        let payload = &bytes[payload_start..];
        let needed = manifest
            .tensors
            .iter()
            .map(|e| e.offset + e.len)
            .max()
            .unwrap_or(0);
        if payload.len() < needed * 8 {
            return Err(CheckpointError::Truncated {
                expected: payload_start + needed * 8,
                found: bytes.len(),
            });
        }

        let mut params = Vec::new();
        let mut first = Vec::new();
        let mut second = Vec::new();
        for e in &manifest.tensors {
            if e.dtype != "f64le" {
                return Err(CheckpointError::CorruptManifest(format!("{}: dtype {}", e.name, e.dtype)));
            }
            let numel: usize = e.shape.iter().product();
            if numel != e.len {
                return Err(CheckpointError::ShapeMismatch {
                    name: e.name.clone(),
                    expected: e.shape.clone(),
                    found: vec![e.len],
                });
            }
            let data: Vec<f64> = payload[e.offset * 8..(e.offset + e.len) * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(e.shape.clone(), data).map_err(|err| CheckpointError::CorruptManifest(err.to_string()))?;
            match e.group.as_str() {
                "param" => params.push((e.name.clone(), t)),
                "adam_m" => first.push(t),
                "adam_v" => second.push(t),
                g => return Err(CheckpointError::CorruptManifest(format!("unknown group {g}"))),
            }
        }

        let optimizer = match manifest.optimizer {
            Some(o) => {
                if first.len() != params.len() || second.len() != params.len() {
                    return Err(CheckpointError::CorruptManifest("optimizer moments incomplete".into()));
                }
                for ((name, p), (m, v)) in params.iter().zip(first.iter().zip(&second)) {
                    if m.shape() != p.shape() || v.shape() != p.shape() {
                        return Err(CheckpointError::ShapeMismatch {
                            name: name.clone(),
                            expected: p.shape().to_vec(),
                            found: m.shape().to_vec(),
                        });
                    }
                }
                Some(AdamState {
                    config: o.config,
                    step: o.step,
                    first_moment: first,
                    second_moment: second,
                })
            }
            None => None,
        };
        Ok(Self {
            model: manifest.model,
            train: manifest.train,
            epoch: manifest.epoch,
            params,
            optimizer,
            rng: manifest.rng,
            history: manifest.history,
        })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let bytes = ckpt.to_bytes()?;
    fs::write(path, bytes).map_err(|e| CheckpointError::Io(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|e| CheckpointError::Io(format!("{}: {e}", path.display())))?;
    Checkpoint::from_bytes(&bytes)
}
