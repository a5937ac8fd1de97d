//! Token and candidate-span representations.
//!
//! The bundled [`ToyEncoder`] is a token embedding lookup followed by a few
//! layers of neighbour mixing: each layer maps the concatenation of the left
//! neighbour, the token itself and the right neighbour through a learned
//! linear map and `tanh`. Stacking layers lets information travel across
//! sentence boundaries. Other encoders plug in through [`TokenEncoder`].

use std::collections::HashMap;
use std::fmt;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::corpus::{Document, Span};
use crate::error::{Error, Result};
use crate::params::{glorot, uniform, ParamStore};

pub const UNK: &str = "<unk>";
pub const UNK_ID: usize = 0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    #[default]
    Toy,
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub h: usize,
    pub l_max: usize,
    pub kind: EncoderKind,
    pub context_layers: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            h: 32,
            l_max: 4,
            kind: EncoderKind::Toy,
            context_layers: 2,
            vocab_size: 5000,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h == 0 {
            return Err(Error::Config("encoder.h must be positive".into()));
        }
        if self.l_max == 0 {
            return Err(Error::Config("encoder.l_max must be at least 1".into()));
        }
        if self.vocab_size < 2 {
            return Err(Error::Config("encoder.vocab_size must be at least 2".into()));
        }
        Ok(())
    }
}

/// Lowercased whitespace-token vocabulary capped at a maximum size.
/// Id 0 is reserved for unknown tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct TokenVocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for TokenVocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }
}

impl From<TokenVocab> for Vec<String> {
    fn from(v: TokenVocab) -> Self {
        v.tokens
    }
}

impl TokenVocab {
    /// Keeps the `max_size - 1` most frequent lowercased tokens (ties broken
    /// alphabetically) after the reserved UNK entry.
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a Document>, max_size: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for d in docs {
            for t in d.tokens() {
                *counts.entry(t.to_lowercase()).or_default() += 1;
            }
        }
        let mut by_freq: Vec<(String, usize)> = counts.into_iter().collect();
        by_freq.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens = vec![UNK.to_string()];
        tokens.extend(by_freq.into_iter().take(max_size.saturating_sub(1)).map(|(t, _)| t));
        tokens.into()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(&token.to_lowercase()).copied().unwrap_or(UNK_ID)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Every span of 1..=`l_max` tokens that stays inside one sentence, sorted by
/// `(start, end)`.
pub fn enumerate_spans(sentences: &[Span], l_max: usize) -> Vec<Span> {
    let mut spans = Vec::new();
    for s in sentences {
        for start in s.start..s.end {
            for end in start + 1..=(start + l_max).min(s.end) {
                spans.push(Span::new(start, end));
            }
        }
    }
    spans
}

/// Row index into the width-embedding table; spans longer than `l_max`
/// (possible only for gold mentions) share the last row.
pub fn width_bucket(span: &Span, l_max: usize) -> usize {
    span.len().clamp(1, l_max) - 1
}

/// Element-wise max over the span's token rows plus its width embedding.
pub fn pool_span(g: &mut Graph, tokens: Var, span: Span, width_table: Var, l_max: usize) -> Var {
    let rows: Vec<usize> = (span.start..span.end).collect();
    let pooled = g.max_rows(tokens, &rows);
    let width = g.row(width_table, width_bucket(&span, l_max));
    g.add(pooled, width)
}

/// Stacks [`pool_span`] over `spans` into an `n_S × h` matrix.
pub fn span_matrix(g: &mut Graph, tokens: Var, spans: &[Span], width_table: Var, l_max: usize) -> Var {
    let rows: Vec<Var> = spans
        .iter()
        .map(|&s| pool_span(g, tokens, s, width_table, l_max))
        .collect();
    g.concat_rows(&rows)
}

/// Produces the `n × h` token matrix of a document on a graph.
pub trait TokenEncoder: fmt::Debug + Send + Sync {
    /// Adds this encoder's parameters to `store`.
    fn init_params(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng);

    fn encode(&self, g: &mut Graph, doc: &Document) -> Result<Var>;

    fn hidden_size(&self) -> usize;

    /// Token vocabulary to persist alongside the parameters, if any.
    fn token_vocab(&self) -> Option<&TokenVocab> {
        None
    }
}

pub const EMBEDDING: &str = "encoder.embedding";
pub const WIDTH: &str = "encoder.width";

fn layer_weight(l: usize) -> String {
    format!("encoder.ctx.{l}.w")
}

fn layer_bias(l: usize) -> String {
    format!("encoder.ctx.{l}.b")
}

#[derive(Clone, Debug)]
pub struct ToyEncoder {
    vocab: TokenVocab,
    h: usize,
    layers: usize,
}

impl ToyEncoder {
    pub fn new(vocab: TokenVocab, config: &EncoderConfig) -> Self {
        Self {
            vocab,
            h: config.h,
            layers: config.context_layers,
        }
    }
}

impl TokenEncoder for ToyEncoder {
    fn init_params(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        store.insert(EMBEDDING, uniform(self.vocab.len(), self.h, 1.0, rng));
        for l in 0..self.layers {
            store.insert(layer_weight(l), glorot(3 * self.h, self.h, rng));
            store.insert(layer_bias(l), uniform(1, self.h, 0.0, rng));
        }
    }

    fn encode(&self, g: &mut Graph, doc: &Document) -> Result<Var> {
        let n = doc.len();
        if n == 0 {
            return Err(Error::EmptyDocument(doc.doc_id().to_string()));
        }
        let ids: Vec<Option<usize>> = doc.tokens().iter().map(|t| Some(self.vocab.id(t))).collect();
        let table = g.param(EMBEDDING);
        let mut hidden = g.gather_rows(table, ids);
        let left: Vec<Option<usize>> = (0..n).map(|t| t.checked_sub(1)).collect();
        let right: Vec<Option<usize>> = (0..n).map(|t| (t + 1 < n).then_some(t + 1)).collect();
        for l in 0..self.layers {
            let lv = g.gather_rows(hidden, left.clone());
            let rv = g.gather_rows(hidden, right.clone());
            let cat = g.concat_cols(&[lv, hidden, rv]);
            let w = g.param(&layer_weight(l));
            let b = g.param(&layer_bias(l));
            let lin = g.matmul(cat, w);
            let lin = g.add_row(lin, b);
            hidden = g.tanh(lin);
        }
        Ok(hidden)
    }

    fn hidden_size(&self) -> usize {
        self.h
    }

    fn token_vocab(&self) -> Option<&TokenVocab> {
        Some(&self.vocab)
    }
}

/// Width-embedding table shared by all encoders.
pub fn init_width_table(store: &mut ParamStore, l_max: usize, h: usize, rng: &mut ChaCha8Rng) {
    store.insert(WIDTH, uniform(l_max, h, 0.1, rng));
}
