use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Entity and relation label sets. Index `k` of each list is memory slot `k`
/// of the corresponding memory matrix, so the order is part of a trained
/// model and is saved with it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawVocabulary", into = "RawVocabulary")]
pub struct TypeVocabulary {
    entity_types: Vec<String>,
    relation_types: Vec<String>,
    entity_index: HashMap<String, usize>,
    relation_index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct RawVocabulary {
    entity_types: Vec<String>,
    relation_types: Vec<String>,
}

impl TryFrom<RawVocabulary> for TypeVocabulary {
    type Error = Error;

    fn try_from(raw: RawVocabulary) -> Result<Self> {
        TypeVocabulary::new(raw.entity_types, raw.relation_types)
    }
}

impl From<TypeVocabulary> for RawVocabulary {
    fn from(v: TypeVocabulary) -> Self {
        RawVocabulary {
            entity_types: v.entity_types,
            relation_types: v.relation_types,
        }
    }
}

fn index_labels(kind: &str, labels: &[String], allow_empty: bool) -> Result<HashMap<String, usize>> {
    if labels.is_empty() && !allow_empty {
        return Err(Error::VocabularyMismatch(format!("{kind} vocabulary is empty")));
    }
    let mut index = HashMap::with_capacity(labels.len());
    for (i, l) in labels.iter().enumerate() {
        if index.insert(l.clone(), i).is_some() {
            return Err(Error::VocabularyMismatch(format!("duplicate {kind} label `{l}`")));
        }
    }
    Ok(index)
}

impl TypeVocabulary {
    pub fn new(entity_types: Vec<String>, relation_types: Vec<String>) -> Result<Self> {
        let entity_index = index_labels("entity type", &entity_types, false)?;
        let relation_index = index_labels("relation type", &relation_types, true)?;
        Ok(Self {
            entity_types,
            relation_types,
            entity_index,
            relation_index,
        })
    }

    /// Builds a vocabulary from observed labels, sorted lexicographically.
    pub fn from_labels<'a>(
        entity_labels: impl IntoIterator<Item = &'a str>,
        relation_labels: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self> {
        let e: BTreeSet<&str> = entity_labels.into_iter().collect();
        let r: BTreeSet<&str> = relation_labels.into_iter().collect();
        Self::new(
            e.into_iter().map(str::to_string).collect(),
            r.into_iter().map(str::to_string).collect(),
        )
    }

    /// Reads `{"entity_types": [...], "relation_types": [...]}`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Parse {
            doc_index: None,
            source,
        })
    }

    /// Entity types plus the relation ids listed in a DocRED `rel_info.json`
    /// (an object mapping relation id to description).
    pub fn with_relation_info(entity_types: Vec<String>, rel_info: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(rel_info).map_err(|e| Error::io(rel_info, e))?;
        let info: BTreeMap<String, serde_json::Value> = serde_json::from_str(&text).map_err(|source| Error::Parse {
            doc_index: None,
            source,
        })?;
        Self::new(entity_types, info.into_keys().collect())
    }

    pub fn entity_types(&self) -> &[String] {
        &self.entity_types
    }

    pub fn relation_types(&self) -> &[String] {
        &self.relation_types
    }

    pub fn num_entity_types(&self) -> usize {
        self.entity_types.len()
    }

    pub fn num_relation_types(&self) -> usize {
        self.relation_types.len()
    }

    pub fn entity_id(&self, label: &str) -> Option<usize> {
        self.entity_index.get(label).copied()
    }

    pub fn relation_id(&self, label: &str) -> Option<usize> {
        self.relation_index.get(label).copied()
    }

    pub fn entity_label(&self, id: usize) -> &str {
        &self.entity_types[id]
    }

    pub fn relation_label(&self, id: usize) -> &str {
        &self.relation_types[id]
    }
}
