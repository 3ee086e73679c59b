//! Tuning-model files: a binary network encoding followed by a scaler block
//! (magic `OGLS`, `u32` version, `u64` dimension, `f64` means, `f64` stds,
//! all little-endian).

use std::path::Path;

use super::OrchestratorError;
use crate::nn::{decode_network, encode_network_binary};
use crate::tuner::{MtuneModel, Scaler};

pub const SCALER_FORMAT_VERSION: u32 = 1;
const SCALER_MAGIC: &[u8; 4] = b"OGLS";

pub fn encode_mtune(model: &MtuneModel) -> Vec<u8> {
    let mut out = encode_network_binary(&model.network, None);
    out.extend_from_slice(SCALER_MAGIC);
    out.extend_from_slice(&SCALER_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.scaler.mean.len() as u64).to_le_bytes());
    for x in model.scaler.mean.iter().chain(&model.scaler.std) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_mtune(bytes: &[u8]) -> Result<MtuneModel, OrchestratorError> {
    let (file, used) = decode_network(bytes)?;
    let rest = &bytes[used..];
    let corrupt = |m: &str| OrchestratorError::Format(m.to_string());
    if rest.len() < 16 || &rest[..4] != SCALER_MAGIC {
        return Err(corrupt("missing scaler block"));
    }
    let version = u32::from_le_bytes(rest[4..8].try_into().unwrap());
    if version != SCALER_FORMAT_VERSION {
        return Err(OrchestratorError::Version { expected: SCALER_FORMAT_VERSION, found: version });
    }
    let dim = u64::from_le_bytes(rest[8..16].try_into().unwrap()) as usize;
    let body = &rest[16..];
    if dim.checked_mul(16) != Some(body.len()) {
        return Err(corrupt("scaler block length does not match its dimension"));
    }
    let values: Vec<f64> = body.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    let scaler = Scaler { mean: values[..dim].to_vec(), std: values[dim..].to_vec() };
    if scaler.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || scaler.mean.iter().any(|m| !m.is_finite()) {
        return Err(corrupt("scaler holds non-finite or non-positive values"));
    }
    Ok(MtuneModel::new(file.network, scaler)?)
}

/// Writes the model and returns the file size in bytes.
pub fn export_mtune(model: &MtuneModel, path: &Path) -> Result<u64, OrchestratorError> {
    let bytes = encode_mtune(model);
    std::fs::write(path, &bytes)?;
    Ok(bytes.len() as u64)
}

/// Reads a model and returns it with the file size in bytes.
pub fn import_mtune(path: &Path) -> Result<(MtuneModel, u64), OrchestratorError> {
    let bytes = std::fs::read(path)?;
    Ok((decode_mtune(&bytes)?, bytes.len() as u64))
}
