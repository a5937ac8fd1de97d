//! Documents, annotations and corpus ingestion.

mod cdr;
mod docred;
mod split;
mod vocab;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cdr::{convert_pubtator, CdrConversion};
pub use docred::{document_to_docred, load_docred, parse_docred, write_docred};
pub use split::{split_dataset, DatasetSplit, SplitFile, SplitSpec};
pub use vocab::TypeVocabulary;

/// Half-open token range `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains_span(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

/// A coreference cluster: mentions of one entity plus its type index.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntityCluster {
    /// Sorted, duplicate-free.
    pub mentions: Vec<Span>,
    pub entity_type: usize,
}

impl EntityCluster {
    pub fn new(mut mentions: Vec<Span>, entity_type: usize) -> Self {
        mentions.sort();
        mentions.dedup();
        Self { mentions, entity_type }
    }
}

/// Directed relation between two clusters of the same document.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationTriple {
    pub head: usize,
    pub tail: usize,
    pub relation_type: usize,
}

/// A tokenized document with optional gold annotations.
///
/// Immutable after construction; [`Document::new`] enforces the structural
/// invariants (spans inside a single sentence, non-empty clusters, relations
/// between distinct existing clusters).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    doc_id: String,
    tokens: Vec<String>,
    sentences: Vec<Span>,
    clusters: Vec<EntityCluster>,
    relations: Vec<RelationTriple>,
    annotated: bool,
}

impl Document {
    pub fn new(
        doc_id: impl Into<String>,
        tokens: Vec<String>,
        sentences: Vec<Span>,
        clusters: Vec<EntityCluster>,
        mut relations: Vec<RelationTriple>,
    ) -> Result<Self> {
        let doc_id = doc_id.into();
        let n = tokens.len();
        let mut expected_start = 0;
        for s in &sentences {
            if s.start != expected_start || s.end < s.start {
                return Err(Error::validation(
                    &doc_id,
                    format!("sentence ranges must tile the token sequence, found {s:?}"),
                ));
            }
            expected_start = s.end;
        }
        if expected_start != n {
            return Err(Error::validation(
                &doc_id,
                format!("sentences cover {expected_start} tokens but the document has {n}"),
            ));
        }
        for (ci, c) in clusters.iter().enumerate() {
            if c.mentions.is_empty() {
                return Err(Error::validation(&doc_id, format!("cluster {ci} has no mentions")));
            }
            for m in &c.mentions {
                if m.is_empty() || m.end > n {
                    return Err(Error::validation(
                        &doc_id,
                        format!("mention {m:?} of cluster {ci} is outside [0, {n})"),
                    ));
                }
                if !sentences.iter().any(|s| s.contains_span(m)) {
                    return Err(Error::validation(
                        &doc_id,
                        format!("mention {m:?} of cluster {ci} crosses a sentence boundary"),
                    ));
                }
            }
        }
        for r in &relations {
            if r.head >= clusters.len() || r.tail >= clusters.len() {
                return Err(Error::validation(
                    &doc_id,
                    format!(
                        "relation ({}, {}) references a missing cluster; document has {}",
                        r.head,
                        r.tail,
                        clusters.len()
                    ),
                ));
            }
            if r.head == r.tail {
                return Err(Error::validation(
                    &doc_id,
                    format!("relation links cluster {} to itself", r.head),
                ));
            }
        }
        relations.sort();
        relations.dedup();
        Ok(Self {
            doc_id,
            tokens,
            sentences,
            clusters,
            relations,
            annotated: true,
        })
    }

    /// A document without gold annotations, for prediction.
    pub fn unannotated(doc_id: impl Into<String>, tokens: Vec<String>, sentences: Vec<Span>) -> Result<Self> {
        let mut doc = Self::new(doc_id, tokens, sentences, Vec::new(), Vec::new())?;
        doc.annotated = false;
        Ok(doc)
    }

    pub fn doc_id(&self) -> &str {
        &self.doc_id
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn sentences(&self) -> &[Span] {
        &self.sentences
    }

    pub fn clusters(&self) -> &[EntityCluster] {
        &self.clusters
    }

    pub fn relations(&self) -> &[RelationTriple] {
        &self.relations
    }

    pub fn is_annotated(&self) -> bool {
        self.annotated
    }

    /// Distinct gold mention spans, sorted.
    pub fn gold_mentions(&self) -> Vec<Span> {
        let mut all: Vec<Span> = self.clusters.iter().flat_map(|c| c.mentions.iter().copied()).collect();
        all.sort();
        all.dedup();
        all
    }

    /// Every `(span, cluster index)` mention record.
    pub fn mention_records(&self) -> Vec<(Span, usize)> {
        self.clusters
            .iter()
            .enumerate()
            .flat_map(|(ci, c)| c.mentions.iter().map(move |&m| (m, ci)))
            .collect()
    }
}
