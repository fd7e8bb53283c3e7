//! `ANN1` checkpoint files.
//!
//! Layout: magic `ANN1`, u32 LE length of a JSON descriptor, the descriptor,
//! then one blob per parameter tensor: u64 LE byte length followed by
//! little-endian `f32` values.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layers::LayerSpec;
use super::network::Network;
use super::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"ANN1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub layer: usize,
    pub index: usize,
    pub shape: Vec<usize>,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub rng_seed: u64,
    pub tensors: Vec<TensorInfo>,
    /// Model-specific metadata (class names, feature config, ...).
    pub meta: serde_json::Value,
}

pub fn encode(net: &Network, meta: &serde_json::Value) -> Result<Vec<u8>> {
    let tensors: Vec<TensorInfo> = net
        .params()
        .iter()
        .enumerate()
        .flat_map(|(layer, group)| {
            group.iter().enumerate().map(move |(index, t)| TensorInfo {
                layer,
                index,
                shape: t.shape().to_vec(),
                bytes: 4 * t.len() as u64,
            })
        })
        .collect();
    let descriptor = Descriptor {
        input_shape: net.input_shape().to_vec(),
        layers: net.layers().to_vec(),
        rng_seed: net.rng_seed(),
        tensors,
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&descriptor)?;
    let mut out = Vec::with_capacity(8 + json.len() + 4 * net.param_count() + 8 * descriptor.tensors.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in net.params().iter().flatten() {
        out.extend_from_slice(&(4 * t.len() as u64).to_le_bytes());
        for &v in t.values() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(Network, serde_json::Value)> {
    let bad = |msg: &str| Error::Format(format!("checkpoint: {msg}"));
    if bytes.len() < 8 || &bytes[0..4] != MAGIC {
        return Err(bad("missing ANN1 magic"));
    }
    let json_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let json_end = 8usize
        .checked_add(json_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("descriptor overruns file"))?;
    let descriptor: Descriptor = serde_json::from_slice(&bytes[8..json_end])?;

    let mut pos = json_end;
    let mut params: Vec<Vec<Tensor>> = vec![Vec::new(); descriptor.layers.len()];
    for info in &descriptor.tensors {
        if pos + 8 > bytes.len() {
            return Err(bad("truncated blob header"));
        }
        let len = u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap()) as usize;
        pos += 8;
        if len as u64 != info.bytes || len != 4 * info.shape.iter().product::<usize>() {
            return Err(bad("blob length disagrees with descriptor"));
        }
        let end = pos.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated blob"))?;
        let values = bytes[pos..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        pos = end;
        let group = params
            .get_mut(info.layer)
            .ok_or_else(|| bad("tensor refers to a missing layer"))?;
        if group.len() != info.index {
            return Err(bad("tensors out of order"));
        }
        group.push(Tensor::new(info.shape.clone(), values)?);
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    let net = Network::from_parts(
        &descriptor.input_shape,
        descriptor.layers,
        params,
        descriptor.rng_seed,
    )?;
    Ok((net, descriptor.meta))
}

/// Hex SHA-256 of checkpoint bytes, used to tie records to a victim.
pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
