//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! 8 bytes   magic "EMOIGCKP"
//! u32       format version
//! u32       header length H
//! H bytes   UTF-8 JSON header: config, target, seed, tensor directory
//! ...       f64 payloads in directory order
//! ```
//!
//! The directory lists parameters in name order followed by the batch-norm
//! running statistics, so identical models produce identical bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EmotionLabel, EmotionModel, ModelConfig};
use crate::autodiff::{BatchNormState, ParameterStore};
use crate::error::{Error, Result};
use crate::export::write_atomic;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EMOIGCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

const RUNNING_MEAN: &str = "bn.running_mean";
const RUNNING_VAR: &str = "bn.running_var";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    target: EmotionLabel,
    seed: u64,
    tensors: Vec<Entry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    /// `None` marks a buffer rather than a parameter.
    trainable: Option<bool>,
}

pub fn encode_checkpoint(model: &EmotionModel) -> Result<Vec<u8>> {
    let mut entries = Vec::new();
    let mut payload: Vec<&[f64]> = Vec::new();
    for (name, p) in model.params.iter() {
        entries.push(Entry {
            name: name.to_string(),
            shape: p.value.shape().to_vec(),
            trainable: Some(p.trainable),
        });
        payload.push(p.value.values());
    }
    let f = model.bn_state.running_mean.len();
    for (name, buf) in [
        (RUNNING_MEAN, &model.bn_state.running_mean),
        (RUNNING_VAR, &model.bn_state.running_var),
    ] {
        entries.push(Entry {
            name: name.to_string(),
            shape: vec![f],
            trainable: None,
        });
        payload.push(buf);
    }
    let header = Header {
        config: model.config.clone(),
        target: model.target,
        seed: model.seed,
        tensors: entries,
    };
    let json = serde_json::to_vec(&header)
        .map_err(|e| Error::Argument(format!("checkpoint header: {e}")))?;
    let mut out =
        Vec::with_capacity(16 + json.len() + payload.iter().map(|p| p.len() * 8).sum::<usize>());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in payload {
        for v in p {
            out.write_all(&v.to_le_bytes()).expect("write to Vec");
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<EmotionModel> {
    let bad = |reason: &str| Error::format(path, reason);
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a model checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = bytes
        .get(16..16 + hlen)
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| bad(&format!("header: {e}")))?;
    header.config.validate()?;

    let mut cursor = 16 + hlen;
    let mut params = ParameterStore::new();
    let mut bn = BatchNormState::with_params(
        header.config.conv_filters,
        header.config.bn_momentum,
        header.config.bn_eps,
    );
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        let raw = bytes
            .get(cursor..cursor + 8 * n)
            .ok_or_else(|| bad(&format!("truncated payload for {}", entry.name)))?;
        cursor += 8 * n;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        match (entry.trainable, entry.name.as_str()) {
            (Some(trainable), name) => {
                params.insert(name, Tensor::new(&entry.shape, values)?, trainable)?
            }
            (None, RUNNING_MEAN) => bn.running_mean = values,
            (None, RUNNING_VAR) => bn.running_var = values,
            (None, other) => return Err(bad(&format!("unknown buffer {other}"))),
        }
    }
    if cursor != bytes.len() {
        return Err(bad("trailing bytes after payload"));
    }
    let reference = EmotionModel::build(header.config.clone(), header.target, header.seed)?;
    for (name, p) in reference.params.iter() {
        let got = params
            .get(name)
            .ok_or_else(|| bad(&format!("missing parameter {name}")))?;
        if got.value.shape() != p.value.shape() {
            return Err(bad(&format!("parameter {name} has the wrong shape")));
        }
    }
    if params.len() != reference.params.len() {
        return Err(bad("unexpected extra parameters"));
    }
    Ok(EmotionModel {
        config: header.config,
        params,
        bn_state: bn,
        target: header.target,
        seed: header.seed,
    })
}

pub fn write_checkpoint(model: &EmotionModel, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(model)?;
    write_atomic(path, &bytes)
}

pub fn read_checkpoint(path: &Path) -> Result<EmotionModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
