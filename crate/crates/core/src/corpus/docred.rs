//! DocRED JSON schema: `sents`, `vertexSet`, `labels`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Document, EntityCluster, RelationTriple, Span, TypeVocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct RawDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    title: Option<String>,
    sents: Vec<Vec<String>>,
    #[serde(rename = "vertexSet", default, skip_serializing_if = "Option::is_none")]
    vertex_set: Option<Vec<Vec<RawMention>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<RawLabel>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawMention {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    sent_id: usize,
    pos: [usize; 2],
    #[serde(rename = "type")]
    kind: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawLabel {
    h: usize,
    t: usize,
    r: String,
}

/// Reads a DocRED-schema JSON file. When `vocab` is `None` the vocabulary is
/// built from the labels found in the file.
pub fn load_docred(path: &Path, vocab: Option<&TypeVocabulary>) -> Result<(Vec<Document>, TypeVocabulary)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_docred(&text, vocab)
}

pub fn parse_docred(text: &str, vocab: Option<&TypeVocabulary>) -> Result<(Vec<Document>, TypeVocabulary)> {
    let values: Vec<Value> = serde_json::from_str(text).map_err(|source| Error::Parse {
        doc_index: None,
        source,
    })?;
    let raws = values
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            serde_json::from_value::<RawDocument>(v).map_err(|source| Error::Parse {
                doc_index: Some(i),
                source,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let vocab = match vocab {
        Some(v) => v.clone(),
        None => {
            let entities = raws
                .iter()
                .flat_map(|d| d.vertex_set.iter().flatten().flatten())
                .map(|m| m.kind.as_str());
            let relations = raws
                .iter()
                .flat_map(|d| d.labels.iter().flatten())
                .map(|l| l.r.as_str());
            TypeVocabulary::from_labels(entities, relations)?
        }
    };

    let docs = raws
        .into_iter()
        .enumerate()
        .map(|(i, raw)| convert(i, raw, &vocab))
        .collect::<Result<Vec<_>>>()?;
    Ok((docs, vocab))
}

fn convert(index: usize, raw: RawDocument, vocab: &TypeVocabulary) -> Result<Document> {
    let doc_id = raw.title.clone().unwrap_or_else(|| format!("doc_{index}"));
    let mut sentences = Vec::with_capacity(raw.sents.len());
    let mut offset = 0;
    for s in &raw.sents {
        sentences.push(Span::new(offset, offset + s.len()));
        offset += s.len();
    }
    let tokens: Vec<String> = raw.sents.into_iter().flatten().collect();
    if tokens.is_empty() {
        return Err(Error::validation(&doc_id, "document has no tokens"));
    }

    let Some(vertex_set) = raw.vertex_set else {
        return Document::unannotated(doc_id, tokens, sentences);
    };

    let mut clusters = Vec::with_capacity(vertex_set.len());
    for (ci, vertex) in vertex_set.iter().enumerate() {
        let Some(first) = vertex.first() else {
            return Err(Error::validation(&doc_id, format!("vertex {ci} has no mentions")));
        };
        // A cluster takes the type of its first mention.
        let entity_type = vocab.entity_id(&first.kind).ok_or_else(|| {
            Error::VocabularyMismatch(format!(
                "document `{doc_id}`: entity type `{}` is not in the vocabulary",
                first.kind
            ))
        })?;
        let mut mentions = Vec::with_capacity(vertex.len());
        for m in vertex {
            let sentence = sentences.get(m.sent_id).ok_or_else(|| {
                Error::validation(
                    &doc_id,
                    format!(
                        "mention in vertex {ci} names sentence {} of {}",
                        m.sent_id,
                        sentences.len()
                    ),
                )
            })?;
            let [start, end] = m.pos;
            if start >= end || end > sentence.len() {
                return Err(Error::validation(
                    &doc_id,
                    format!(
                        "mention [{start}, {end}) in vertex {ci} is out of bounds for sentence {} of length {}",
                        m.sent_id,
                        sentence.len()
                    ),
                ));
            }
            mentions.push(Span::new(sentence.start + start, sentence.start + end));
        }
        clusters.push(EntityCluster::new(mentions, entity_type));
    }

    let mut relations = Vec::new();
    for l in raw.labels.unwrap_or_default() {
        let relation_type = vocab.relation_id(&l.r).ok_or_else(|| {
            Error::VocabularyMismatch(format!(
                "document `{doc_id}`: relation type `{}` is not in the vocabulary",
                l.r
            ))
        })?;
        relations.push(RelationTriple {
            head: l.h,
            tail: l.t,
            relation_type,
        });
    }
    Document::new(doc_id, tokens, sentences, clusters, relations)
}

/// Serializes a document back to the DocRED schema.
pub fn document_to_docred(doc: &Document, vocab: &TypeVocabulary) -> Value {
    let sents = doc
        .sentences()
        .iter()
        .map(|s| doc.tokens()[s.start..s.end].to_vec())
        .collect();
    let locate = |m: &Span| {
        doc.sentences()
            .iter()
            .position(|s| s.contains_span(m))
            .expect("document invariant: mentions are sentence-local")
    };
    let raw = RawDocument {
        title: Some(doc.doc_id().to_string()),
        sents,
        vertex_set: doc.is_annotated().then(|| {
            doc.clusters()
                .iter()
                .map(|c| {
                    c.mentions
                        .iter()
                        .map(|m| {
                            let sent_id = locate(m);
                            let base = doc.sentences()[sent_id].start;
                            RawMention {
                                name: Some(doc.tokens()[m.start..m.end].join(" ")),
                                sent_id,
                                pos: [m.start - base, m.end - base],
                                kind: vocab.entity_label(c.entity_type).to_string(),
                            }
                        })
                        .collect()
                })
                .collect()
        }),
        labels: doc.is_annotated().then(|| {
            doc.relations()
                .iter()
                .map(|r| RawLabel {
                    h: r.head,
                    t: r.tail,
                    r: vocab.relation_label(r.relation_type).to_string(),
                })
                .collect()
        }),
    };
    serde_json::to_value(raw).expect("DocRED records always serialize")
}

pub fn write_docred(path: &Path, docs: &[Document], vocab: &TypeVocabulary) -> Result<()> {
    let values: Vec<Value> = docs.iter().map(|d| document_to_docred(d, vocab)).collect();
    let text = serde_json::to_string_pretty(&values).expect("JSON values always serialize");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
