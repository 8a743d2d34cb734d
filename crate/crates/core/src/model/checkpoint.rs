//! Checkpoint container: magic line, little-endian header length, JSON
//! header, then raw `f64` little-endian tensor payloads (parameters, then
//! the two Adam moments when present).

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::net::Model;
use super::train::{AdamState, TrainConfig};
use super::ModelError;

pub const CHECKPOINT_FORMAT: &str = "popmag-ckpt-1";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    /// Offset in `f64` elements from the start of the payload.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
    step: u64,
    has_optimizer_state: bool,
    optimizer: Option<TrainConfig>,
    run_config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub adam: Option<AdamState>,
    pub train_config: Option<TrainConfig>,
    /// Settings of the run that produced the checkpoint.
    pub run_config: serde_json::Value,
}

impl Checkpoint {
    pub fn new(model: Model) -> Self {
        Self { model, adam: None, train_config: None, run_config: serde_json::Value::Null }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0;
        let tensors = self
            .model
            .names()
            .iter()
            .zip(self.model.params())
            .map(|(n, p)| {
                let e = TensorEntry { name: n.clone(), shape: [p.nrows(), p.ncols()], offset };
                offset += p.len();
                e
            })
            .collect();
        let header = Header {
            format: CHECKPOINT_FORMAT.into(),
            config: self.model.cfg.clone(),
            tensors,
            step: self.adam.as_ref().map_or(0, |a| a.step),
            has_optimizer_state: self.adam.is_some(),
            optimizer: self.train_config.clone(),
            run_config: self.run_config.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_FORMAT.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |ts: &[Array2<f64>]| {
            for t in ts {
                for x in t.iter() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        };
        put(self.model.params());
        if let Some(a) = &self.adam {
            put(&a.m);
            put(&a.v);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let bad = |m: &str| ModelError::Checkpoint(m.to_string());
        let magic_len = CHECKPOINT_FORMAT.len() + 1;
        if bytes.len() < magic_len + 8 || &bytes[..CHECKPOINT_FORMAT.len()] != CHECKPOINT_FORMAT.as_bytes() {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let len = u64::from_le_bytes(bytes[magic_len..magic_len + 8].try_into().expect("8 bytes")) as usize;
        let body = magic_len + 8;
        let header: Header =
            serde_json::from_slice(bytes.get(body..body + len).ok_or_else(|| bad("truncated header"))?)
                .map_err(|e| ModelError::Checkpoint(format!("header: {e}")))?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(bad("unsupported format version"));
        }
        let payload = &bytes[body + len..];
        let total: usize = header.tensors.iter().map(|t| t.shape[0] * t.shape[1]).sum();
        let sets = if header.has_optimizer_state { 3 } else { 1 };
        if payload.len() != total * sets * 8 {
            return Err(bad("payload size does not match the tensor table"));
        }
        let read = |set: usize| -> Vec<Array2<f64>> {
            header
                .tensors
                .iter()
                .map(|t| {
                    let start = (set * total + t.offset) * 8;
                    let n = t.shape[0] * t.shape[1];
                    let v = payload[start..start + n * 8]
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect();
                    Array2::from_shape_vec((t.shape[0], t.shape[1]), v).expect("shape matches length")
                })
                .collect()
        };
        let names = header.tensors.iter().map(|t| t.name.clone()).collect();
        let model = Model::from_parts(header.config, names, read(0))?;
        let adam = header.has_optimizer_state.then(|| AdamState { step: header.step, m: read(1), v: read(2) });
        Ok(Self { model, adam, train_config: header.optimizer, run_config: header.run_config })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, self.to_bytes()).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = fs::read(path).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}
