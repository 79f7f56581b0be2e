//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `SILTCKPT`, a little-endian `u32` format version,
//! a little-endian `u64` header length, the JSON header, then three `f64`
//! little-endian arrays of equal length: parameters, Adam first moments and
//! Adam second moments. Tensor names and shapes are listed in the header.
//! Sampling state is `(train seed, step)`, both in the header.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use silt_core::model::{AdamState, Checkpoint, ModelConfig, Params, TrainConfig};

use crate::artifact::Header;
use crate::config::{ModelSpec, TrainSpec};
use crate::error::{CliError, Result};

const MAGIC: &[u8; 8] = b"SILTCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub header: Header,
    pub model: ModelSpec,
    pub train: TrainSpec,
    /// Completed optimisation steps.
    pub step: u64,
    pub adam_t: u64,
    pub n_params: usize,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode(ckpt: &Checkpoint, header: &Header) -> Vec<u8> {
    let p = &ckpt.params;
    let meta = CheckpointHeader {
        header: header.clone(),
        model: ModelSpec::from(&p.cfg),
        train: TrainSpec::from(&ckpt.train_cfg),
        step: ckpt.step,
        adam_t: ckpt.adam.t,
        n_params: p.len(),
        tensors: p
            .layout
            .tensors
            .iter()
            .map(|t| TensorEntry { name: t.name.clone(), shape: t.shape.clone(), offset: t.range.start })
            .collect(),
    };
    let json = serde_json::to_vec(&meta).expect("checkpoint header serializes");
    let mut out = Vec::with_capacity(20 + json.len() + 24 * p.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for buf in [&p.data, &ckpt.adam.m, &ckpt.adam.v] {
        for x in buf.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<(Checkpoint, CheckpointHeader)> {
    let bad = |m: &str| CliError::Format(format!("checkpoint: {m}"));
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = bytes.get(20..).ok_or_else(|| bad("truncated"))?;
    let json = body.get(..hlen).ok_or_else(|| bad("truncated header"))?;
    let meta: CheckpointHeader = serde_json::from_slice(json).map_err(|e| bad(&e.to_string()))?;
    let n = meta.n_params;
    let data = &body[hlen..];
    if data.len() != 3 * 8 * n {
        return Err(bad(&format!("expected {} payload bytes, found {}", 24 * n, data.len())));
    }
    let read = |k: usize| -> Vec<f64> {
        data[k * 8 * n..(k + 1) * 8 * n].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
    };
    let cfg = ModelConfig::from(&meta.model);
    let params = Params::from_data(&cfg, read(0))?;
    let layout_ok = params.layout.tensors.len() == meta.tensors.len()
        && params
            .layout
            .tensors
            .iter()
            .zip(&meta.tensors)
            .all(|(a, b)| a.name == b.name && a.shape == b.shape && a.range.start == b.offset);
    if !layout_ok {
        return Err(bad("tensor table does not match the model configuration"));
    }
    let ckpt = Checkpoint {
        params,
        adam: AdamState { m: read(1), v: read(2), t: meta.adam_t },
        train_cfg: TrainConfig::try_from(&meta.train)?,
        step: meta.step,
    };
    Ok((ckpt, meta))
}

pub fn save(path: &Path, ckpt: &Checkpoint, header: &Header) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(&encode(ckpt, header)).map_err(|e| CliError::io(path, e))
}

pub fn load(path: &Path) -> Result<(Checkpoint, CheckpointHeader)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| CliError::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let cfg = ModelConfig { d_model: 8, n_heads: 2, d_ff: 8, max_seq_len: 8, vocab_size: 20, ..Default::default() };
        let params = Params::init(&cfg).unwrap();
        let mut adam = AdamState::new(params.len());
        adam.m[3] = 0.25;
        adam.v[5] = 1e-300;
        adam.t = 17;
        Checkpoint { params, adam, train_cfg: TrainConfig::default(), step: 17 }
    }

    #[test]
    fn roundtrip_is_exact() {
        let ck = sample();
        let h = Header::new("train", &1u8, 0);
        let bytes = encode(&ck, &h);
        let (back, meta) = decode(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(meta.header, h);
        assert_eq!(encode(&back, &h), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let ck = sample();
        let bytes = encode(&ck, &Header::new("train", &1u8, 0));
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut v2 = bytes;
        v2[8] = 2;
        assert!(decode(&v2).is_err());
    }
}
