//! Self-describing checkpoint container.
//!
//! Layout: 8-byte magic, little-endian `u64` header length, a JSON header
//! (config text, hash, step, tensor table, metrics history), then raw
//! little-endian `f32` data: every parameter, followed by the first and
//! second optimizer moments in the same order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, MetricRecord};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::MODEL_VERSION;
use crate::nn::ParamSet;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CFSCKPT1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub config_hash: String,
    pub params: ParamSet<f32>,
    pub optimizer: AdamState<f32>,
    pub epoch: usize,
    pub history: Vec<MetricRecord>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model_version: String,
    config_hash: String,
    config: String,
    epoch: usize,
    step: u64,
    dtype: String,
    tensors: Vec<TensorEntry>,
    history: Vec<MetricRecord>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            model_version: MODEL_VERSION.to_string(),
            config_hash: self.config_hash.clone(),
            config: self.config.canonical(),
            epoch: self.epoch,
            step: self.optimizer.step,
            dtype: "f32le".into(),
            tensors: self
                .params
                .entries()
                .iter()
                .map(|e| TensorEntry { name: e.name.clone(), shape: e.value.shape().to_vec(), trainable: e.trainable })
                .collect(),
            history: self.history.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + 12 * self.params.count(false));
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let tensors = self.params.entries().iter().map(|e| &e.value).chain(&self.optimizer.m).chain(&self.optimizer.v);
        for t in tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses a checkpoint; the stored hash must match the config under the current model version.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + len).ok_or_else(|| Error::Format("truncated checkpoint header".into()))?;
        let header: Header = serde_json::from_slice(body)?;
        if header.model_version != MODEL_VERSION {
            return Err(Error::Config(format!(
                "checkpoint was written by model version {}, this build is {MODEL_VERSION}",
                header.model_version
            )));
        }
        let config = RunConfig::parse(&header.config)?;
        if config.hash() != header.config_hash {
            return Err(Error::Config(format!(
                "checkpoint config hash {} does not match its config ({})",
                header.config_hash,
                config.hash()
            )));
        }
        let mut data = bytes[16 + len..].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")));
        let expect: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum::<usize>() * 3;
        if bytes.len() - 16 - len != expect * 4 {
            return Err(Error::Format(format!(
                "checkpoint payload has {} bytes, header implies {}",
                bytes.len() - 16 - len,
                expect * 4
            )));
        }
        let mut take = |shape: &[usize]| -> Result<Tensor<f32>> {
            let n = shape.iter().product();
            Tensor::new(shape, data.by_ref().take(n).collect())
        };
        let mut params = ParamSet::new();
        for t in &header.tensors {
            let value = take(&t.shape)?;
            params.add(t.name.clone(), value, t.trainable);
        }
        let m = header.tensors.iter().map(|t| take(&t.shape)).collect::<Result<Vec<_>>>()?;
        let v = header.tensors.iter().map(|t| take(&t.shape)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            config_hash: header.config_hash,
            params,
            optimizer: AdamState { m, v, step: header.step },
            epoch: header.epoch,
            history: header.history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
