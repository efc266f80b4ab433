//! Checkpoint files: an 8-byte magic, a little-endian `u64` manifest
//! length, a JSON manifest (config, vocabulary, tensor names, shapes and
//! offsets) and then every tensor as little-endian `f64` in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ParamSet, Vocab};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"UGCKPT1\n";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    /// In elements from the start of the data block.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    config: ModelConfig,
    vocab: Vocab,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub vocab: Vocab,
}

pub fn save_checkpoint(path: &Path, model: &Model, vocab: &Vocab) -> Result<()> {
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (name, v) in model.params.iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: [v.nrows(), v.ncols()],
            offset,
        });
        offset += v.len();
    }
    let manifest = serde_json::to_vec(&Manifest {
        config: model.config.clone(),
        vocab: vocab.clone(),
        tensors,
    })
    .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut buf = Vec::with_capacity(16 + manifest.len() + offset * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    buf.extend_from_slice(&manifest);
    for (_, v) in model.params.iter() {
        for x in v.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let data_start = 16usize
        .checked_add(mlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated manifest"))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[16..data_start])
        .map_err(|e| bad(&format!("manifest: {e}")))?;
    let data = &bytes[data_start..];
    if data.len() % 8 != 0 {
        return Err(bad("data block is not a whole number of f64 values"));
    }
    let values: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut stored = ParamSet::new();
    for t in &manifest.tensors {
        let len = t.shape[0] * t.shape[1];
        let slice = values
            .get(t.offset..t.offset + len)
            .ok_or_else(|| bad(&format!("tensor {:?} runs past the data block", t.name)))?;
        let arr = Array2::from_shape_vec((t.shape[0], t.shape[1]), slice.to_vec())
            .expect("length matches shape");
        stored.push(t.name.clone(), arr);
    }
    let mut model = Model::new(manifest.config, 0)?;
    model.params.load_from(&stored)?;
    Ok(Checkpoint {
        model,
        vocab: manifest.vocab,
    })
}
