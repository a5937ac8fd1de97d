//! Run configuration as flat JSON with dotted keys, e.g.
//!
//! ```json
//! { "data.train": "train.json", "memory.s_E": 16, "train.epochs": 20 }
//! ```
//!
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::corpus::TypeVocabulary;
use crate::encoder::{EncoderConfig, EncoderKind, TokenVocab, ToyEncoder};
use crate::error::{Error, Result};
use crate::evaluation::EvalConfig;
use crate::memory::MemoryConfig;
use crate::pipeline::{HeadConfig, Model};
use crate::training::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// When set, `train` is the whole corpus and is partitioned by this file.
    pub split_file: Option<PathBuf>,
    /// Fixed type vocabulary; built from the training data when absent.
    pub vocab: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub output: OutputConfig,
    pub encoder: EncoderConfig,
    pub memory: MemoryConfig,
    pub model: HeadConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_flat_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
        let Value::Object(flat) = value else {
            return Err(Error::Config("configuration must be a JSON object".into()));
        };
        Self::from_flat_map(&flat)
    }

    pub fn from_flat_map(flat: &Map<String, Value>) -> Result<Self> {
        let mut nested = Map::new();
        for (key, value) in flat {
            let Some((section, field)) = key.split_once('.') else {
                return Err(Error::Config(format!(
                    "unknown key `{key}` (keys look like `section.field`)"
                )));
            };
            let entry = nested
                .entry(section.to_string())
                .or_insert_with(|| Value::Object(Map::new()));
            entry
                .as_object_mut()
                .expect("sections are objects")
                .insert(field.to_string(), value.clone());
        }
        let config: RunConfig =
            serde_json::from_value(Value::Object(nested)).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_flat_json(&text)?;
        if let Some(base) = path.parent() {
            config.resolve_data_paths(base);
        }
        Ok(config)
    }

    /// Flat dotted-key form; the inverse of [`RunConfig::from_flat_map`].
    pub fn to_flat_map(&self) -> Map<String, Value> {
        let Value::Object(nested) = serde_json::to_value(self).expect("config serializes") else {
            unreachable!("config serializes to an object");
        };
        let mut flat = Map::new();
        for (section, fields) in nested {
            if let Value::Object(fields) = fields {
                for (field, value) in fields {
                    flat.insert(format!("{section}.{field}"), value);
                }
            }
        }
        flat
    }

    /// Makes relative data paths relative to `base`.
    pub fn resolve_data_paths(&mut self, base: &Path) {
        for p in [
            &mut self.data.train,
            &mut self.data.dev,
            &mut self.data.test,
            &mut self.data.split_file,
            &mut self.data.vocab,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.memory.validate()?;
        self.model.validate()?;
        self.train.validate()
    }

    /// Builds the architecture for this configuration. Only the toy encoder
    /// can be constructed from configuration alone.
    pub fn build_model(&self, types: TypeVocabulary, tokens: TokenVocab) -> Result<Model> {
        let encoder = match self.encoder.kind {
            EncoderKind::Toy => Arc::new(ToyEncoder::new(tokens, &self.encoder)),
            EncoderKind::External => {
                return Err(Error::Config(
                    "encoder.kind = external requires an encoder adapter supplied through Model::new".into(),
                ))
            }
        };
        Model::new(
            types,
            encoder,
            self.encoder.clone(),
            self.memory.clone(),
            self.model.clone(),
        )
    }
}
