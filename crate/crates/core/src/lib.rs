//! Memory-enhanced multi-task joint entity and relation extraction.
//!
//! A single model performs mention detection, coreference resolution,
//! entity typing and relation classification on tokenized documents. Entity
//! and relation classifiers score instances by bilinear similarity against
//! per-category memory matrices, and those memories are read back through
//! attention to rescale token and span representations for every head.
//!
//! The crate is organised by stage:
//!
//! * [`corpus`]: documents, DocRED/CDR ingestion, type vocabularies, splits.
//! * [`encoder`]: token encoders, candidate spans and span pooling.
//! * [`memory`]: memory matrices, attention reads, similarity scoring.
//! * [`pipeline`]: the four task heads and end-to-end prediction.
//! * [`training`]: joint loss, schedules, AdamW and the training loop.
//! * [`evaluation`]: strict micro-F1 and diagnostic metrics.
//! * [`config`], [`checkpoint`]: run configuration and model persistence.
//!
//! Gradients come from the small reverse-mode tape in [`autodiff`].

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod memory;
pub mod params;
pub mod pipeline;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};

/// Bundled synthetic corpus in DocRED format: 10 documents, 3 entity types,
/// 2 relation types.
pub const TINY_CORPUS: &str = include_str!("../data/tiny_corpus.json");

/// Flat run configuration tuned for [`TINY_CORPUS`].
pub const TINY_CONFIG: &str = include_str!("../data/tiny_config.json");
