//! Checkpoint directories.
//!
//! ```text
//! <dir>/manifest.json   {format_version, config, vocabularies, step, total_steps, epoch, dev_f1, tensors}
//! <dir>/tensors.bin     flat tensor store, see below
//! ```
//!
//! The tensor store is little-endian throughout:
//!
//! ```text
//! magic  b"MRXT"
//! u32    version (1)
//! u32    entry count
//! entry: u32 name length, UTF-8 name, u32 rank, rank × u32 dims, f32 values (row-major)
//! ```
//!
//! Entries are written in parameter-path order. The manifest records the
//! SHA-256 of `tensors.bin`; a mismatch on load is an integrity error.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::corpus::TypeVocabulary;
use crate::encoder::TokenVocab;
use crate::error::{Error, Result};
use crate::memory::MemoryStage;
use crate::params::ParamStore;
use crate::pipeline::Model;
use crate::tensor::Matrix;
use crate::training::inference_stage;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSOR_FILE: &str = "tensors.bin";
const MAGIC: &[u8; 4] = b"MRXT";
const TENSOR_VERSION: u32 = 1;
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabularies {
    pub types: TypeVocabulary,
    pub tokens: Option<TokenVocab>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorFileInfo {
    pub file: String,
    pub sha256: String,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    /// Flat dotted-key run configuration.
    pub config: Map<String, Value>,
    pub vocabularies: Vocabularies,
    pub step: usize,
    pub total_steps: usize,
    pub epoch: usize,
    pub dev_f1: f64,
    pub tensors: TensorFileInfo,
}

impl Manifest {
    pub fn run_config(&self) -> Result<RunConfig> {
        RunConfig::from_flat_map(&self.config)
    }
}

pub fn encode_tensors(params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.num_scalars() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, m) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
        for &v in m.as_slice() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("tensor store truncated at byte {}", self.at)))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_tensors(bytes: &[u8]) -> Result<ParamStore> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad tensor store magic".into()));
    }
    let version = r.u32()?;
    if version != TENSOR_VERSION {
        return Err(Error::Checkpoint(format!("unsupported tensor store version {version}")));
    }
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let dims = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let (rows, cols) = match dims.as_slice() {
            [n] => (1, *n),
            [a, b] => (*a, *b),
            _ => {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has unsupported rank {rank}"
                )))
            }
        };
        let raw = r.take(rows * cols * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        store.insert(name, Matrix::from_vec(rows, cols, data));
    }
    if r.at != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after tensor store".into()));
    }
    Ok(store)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub struct CheckpointState<'a> {
    pub config: &'a RunConfig,
    pub model: &'a Model,
    pub params: &'a ParamStore,
    pub step: usize,
    pub total_steps: usize,
    pub epoch: usize,
    pub dev_f1: f64,
}

pub fn save_checkpoint(dir: &Path, state: &CheckpointState<'_>) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bytes = encode_tensors(state.params);
    let tensor_path = dir.join(TENSOR_FILE);
    std::fs::write(&tensor_path, &bytes).map_err(|e| Error::io(&tensor_path, e))?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: state.config.to_flat_map(),
        vocabularies: Vocabularies {
            types: state.model.types().clone(),
            tokens: state.model.encoder().token_vocab().cloned(),
        },
        step: state.step,
        total_steps: state.total_steps,
        epoch: state.epoch,
        dev_f1: state.dev_f1,
        tensors: TensorFileInfo {
            file: TENSOR_FILE.to_string(),
            sha256: sha256_hex(&bytes),
            count: state.params.len(),
        },
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest)
}

/// A model restored from disk, ready for inference.
pub struct LoadedCheckpoint {
    pub manifest: Manifest,
    pub config: RunConfig,
    pub model: Model,
    pub params: ParamStore,
}

impl LoadedCheckpoint {
    pub fn inference_stage(&self) -> MemoryStage {
        inference_stage(
            self.manifest.step,
            self.manifest.total_steps,
            self.config.memory.warmup_proportion,
        )
    }
}

pub fn load_checkpoint(dir: &Path) -> Result<LoadedCheckpoint> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("unreadable manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint format {}",
            manifest.format_version
        )));
    }
    let tensor_path = dir.join(&manifest.tensors.file);
    let bytes = std::fs::read(&tensor_path)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", tensor_path.display())))?;
    let digest = sha256_hex(&bytes);
    if digest != manifest.tensors.sha256 {
        return Err(Error::Checkpoint(format!(
            "{} has SHA-256 {digest}, manifest expects {}",
            tensor_path.display(),
            manifest.tensors.sha256
        )));
    }
    let params = decode_tensors(&bytes)?;
    let config = manifest
        .run_config()
        .map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
    let tokens = manifest
        .vocabularies
        .tokens
        .clone()
        .ok_or_else(|| Error::Checkpoint("checkpoint has no token vocabulary".into()))?;
    let model = config.build_model(manifest.vocabularies.types.clone(), tokens)?;
    let expected = model.init_params(0);
    for (name, m) in expected.iter() {
        match params.get(name) {
            Some(p) if p.shape() == m.shape() => {}
            Some(p) => {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, model expects {:?}",
                    p.shape(),
                    m.shape()
                )))
            }
            None => return Err(Error::Checkpoint(format!("tensor `{name}` is missing"))),
        }
    }
    Ok(LoadedCheckpoint {
        manifest,
        config,
        model,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn tensor_store_roundtrip(shapes in prop::collection::vec((1usize..4, 1usize..5), 1..4), seed in 0u64..1000) {
            let mut store = ParamStore::new();
            for (i, (r, c)) in shapes.iter().enumerate() {
                let data = (0..r * c).map(|k| ((k as u64 * 31 + seed) % 97) as f64 * 0.125 - 3.0).collect();
                store.insert(format!("p.{i}"), Matrix::from_vec(*r, *c, data));
            }
            let back = decode_tensors(&encode_tensors(&store)).unwrap();
            prop_assert_eq!(back, store);
        }
    }

    #[test]
    fn truncated_store_is_rejected() {
        let mut store = ParamStore::new();
        store.insert("a", Matrix::filled(2, 2, 1.5));
        let bytes = encode_tensors(&store);
        assert!(decode_tensors(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_tensors(b"XXXX").is_err());
    }
}
