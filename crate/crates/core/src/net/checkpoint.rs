//! Binary checkpoint: magic `LDCK`, format version (u32 LE), header length
//! (u64 LE), JSON header, then all parameters as little-endian f64 in
//! layout order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Model, Net, NetConfig};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LDCK";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub net: NetConfig,
    pub steps: usize,
    pub schedule: String,
    pub tensors: Vec<TensorEntry>,
    pub n_params: usize,
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn checkpoint_bytes(model: &Model, meta: serde_json::Value) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        net: model.cfg().clone(),
        steps: model.schedule.steps(),
        schedule: model.schedule.fingerprint(),
        tensors: model
            .net
            .specs
            .iter()
            .map(|s| TensorEntry {
                name: s.name.clone(),
                shape: s.shape.clone(),
            })
            .collect(),
        n_params: model.params.len(),
        meta,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * model.params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in &model.params {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Writes the checkpoint and returns its SHA-256 hex digest.
pub fn save_checkpoint(model: &Model, path: &Path, meta: serde_json::Value) -> Result<String> {
    let bytes = checkpoint_bytes(model, meta)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<(CheckpointHeader, Model)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(body).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let net = Net::new(&header.net)?;
    let expected: Vec<TensorEntry> = net
        .specs
        .iter()
        .map(|s| TensorEntry {
            name: s.name.clone(),
            shape: s.shape.clone(),
        })
        .collect();
    if expected != header.tensors || header.n_params != net.n_params {
        return Err(bad("tensor table does not match the architecture"));
    }
    let schedule = NoiseSchedule::cosine(header.steps)?;
    if schedule.fingerprint() != header.schedule {
        return Err(bad("noise schedule fingerprint mismatch"));
    }
    let data = &bytes[16 + hlen..];
    if data.len() != 8 * net.n_params {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter bytes, found {}",
            8 * net.n_params,
            data.len()
        )));
    }
    let params: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if !params.iter().all(|v| v.is_finite()) {
        return Err(bad("non-finite parameters"));
    }
    Ok((header, Model::from_parts(net, params, schedule)))
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, Model)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes)
}

/// Copy the encoder tensors of another checkpoint into `model`.
pub fn load_encoder_into(model: &mut Model, path: &Path) -> Result<()> {
    let (_, src) = load_checkpoint(path)?;
    for spec in model.net.specs.iter().filter(|s| s.name.starts_with("encoder.")) {
        let other = src
            .net
            .spec(&spec.name)
            .ok_or_else(|| Error::Checkpoint(format!("pretrained checkpoint lacks {}", spec.name)))?;
        if other.shape != spec.shape {
            return Err(Error::Checkpoint(format!("shape mismatch for {}", spec.name)));
        }
        model.params[spec.offset..spec.offset + spec.len()]
            .copy_from_slice(&src.params[other.offset..other.offset + other.len()]);
    }
    Ok(())
}
