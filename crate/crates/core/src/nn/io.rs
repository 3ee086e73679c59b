//! Model files.
//!
//! Two encodings carry the same content (format version, layer chain, flat
//! parameters, optional initialization seed):
//!
//! * JSON: `{"format_version":1,"layers":[{"input_dim":4,"output_dim":8,"activation":"relu"},...],
//!   "params":[...],"seed":42}`. Floats are written in shortest round-trip form.
//! * Binary, little-endian: magic `OGLN`, `u32` version, `u32` layer count, per layer
//!   `u32 input_dim, u32 output_dim, u8 activation (0 relu, 1 softmax, 2 identity)`,
//!   `u8` seed flag, `u64` seed, `u64` parameter count, then `f64` parameters.
//!
//! [`decode_network`] accepts either.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::Activation;
use super::{DenseNetwork, LayerSpec, NnError};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"OGLN";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelFormat {
    Json,
    Binary,
}

/// A network plus the seed it was initialized from, if known.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub network: DenseNetwork,
    pub seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct JsonModel {
    format_version: u32,
    layers: Vec<LayerSpec>,
    params: Vec<f64>,
    #[serde(default)]
    seed: Option<u64>,
}

pub fn encode_network_json(net: &DenseNetwork, seed: Option<u64>) -> Vec<u8> {
    let doc = JsonModel {
        format_version: MODEL_FORMAT_VERSION,
        layers: net.layers().to_vec(),
        params: net.params().to_vec(),
        seed,
    };
    serde_json::to_vec(&doc).expect("model serializes")
}

pub fn encode_network_binary(net: &DenseNetwork, seed: Option<u64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + net.layers().len() * 9 + net.param_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    for l in net.layers() {
        out.extend_from_slice(&(l.input_dim as u32).to_le_bytes());
        out.extend_from_slice(&(l.output_dim as u32).to_le_bytes());
        out.push(l.activation.code());
    }
    out.push(u8::from(seed.is_some()));
    out.extend_from_slice(&seed.unwrap_or(0).to_le_bytes());
    out.extend_from_slice(&(net.param_count() as u64).to_le_bytes());
    for p in net.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

/// Decodes a model in either encoding. Returns the model and the number of bytes consumed.
pub fn decode_network(bytes: &[u8]) -> Result<(ModelFile, usize), NnError> {
    if bytes.starts_with(MAGIC) {
        decode_binary(bytes)
    } else {
        let doc: JsonModel = serde_json::from_slice(bytes).map_err(|e| NnError::Corrupt(e.to_string()))?;
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(NnError::Version { expected: MODEL_FORMAT_VERSION, found: doc.format_version });
        }
        let network = DenseNetwork::from_params(doc.layers, doc.params)?;
        Ok((ModelFile { network, seed: doc.seed }, bytes.len()))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| NnError::Corrupt("truncated model".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, NnError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode_binary(bytes: &[u8]) -> Result<(ModelFile, usize), NnError> {
    let mut c = Cursor { bytes, pos: MAGIC.len() };
    let version = c.u32()?;
    if version != MODEL_FORMAT_VERSION {
        return Err(NnError::Version { expected: MODEL_FORMAT_VERSION, found: version });
    }
    let n_layers = c.u32()? as usize;
    if n_layers > 1024 {
        return Err(NnError::Corrupt(format!("implausible layer count {n_layers}")));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let input_dim = c.u32()? as usize;
        let output_dim = c.u32()? as usize;
        let code = c.u8()?;
        let activation =
            Activation::from_code(code).ok_or_else(|| NnError::Corrupt(format!("unknown activation code {code}")))?;
        layers.push(LayerSpec { input_dim, output_dim, activation });
    }
    let has_seed = c.u8()? != 0;
    let seed = c.u64()?;
    let n_params = c.u64()? as usize;
    let raw = c.take(n_params.checked_mul(8).ok_or_else(|| NnError::Corrupt("overflow".into()))?)?;
    let params = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    let network = DenseNetwork::from_params(layers, params)?;
    Ok((ModelFile { network, seed: has_seed.then_some(seed) }, c.pos))
}

pub fn write_network(path: &Path, net: &DenseNetwork, seed: Option<u64>, format: ModelFormat) -> Result<u64, NnError> {
    let bytes = match format {
        ModelFormat::Json => encode_network_json(net, seed),
        ModelFormat::Binary => encode_network_binary(net, seed),
    };
    std::fs::write(path, &bytes)?;
    Ok(bytes.len() as u64)
}

pub fn read_network(path: &Path) -> Result<ModelFile, NnError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let (file, used) = decode_network(&bytes)?;
    if used != bytes.len() {
        return Err(NnError::Corrupt(format!("{} trailing bytes", bytes.len() - used)));
    }
    Ok(file)
}
