use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Document;
use crate::error::{Error, Result};

/// Split file: `{"train": [doc_id...], "dev": [...], "test": [...]}`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFile {
    #[serde(default)]
    pub train: Vec<String>,
    #[serde(default)]
    pub dev: Vec<String>,
    #[serde(default)]
    pub test: Vec<String>,
}

impl SplitFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Parse {
            doc_index: None,
            source,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SplitSpec {
    File(SplitFile),
    /// Train/dev/test fractions; documents keep their input order.
    Ratio(f64, f64, f64),
}

#[derive(Clone, Debug, Default)]
pub struct DatasetSplit {
    pub train: Vec<Document>,
    pub dev: Vec<Document>,
    pub test: Vec<Document>,
    pub warnings: Vec<String>,
}

impl DatasetSplit {
    pub fn partition(&self, name: &str) -> Option<&[Document]> {
        match name {
            "train" => Some(&self.train),
            "dev" => Some(&self.dev),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

pub fn split_dataset(docs: Vec<Document>, spec: &SplitSpec) -> Result<DatasetSplit> {
    let mut out = match spec {
        SplitSpec::Ratio(a, b, c) => split_by_ratio(docs, *a, *b, *c)?,
        SplitSpec::File(file) => split_by_file(docs, file)?,
    };
    for (name, part) in [("dev", &out.dev), ("test", &out.test)] {
        if part.is_empty() {
            out.warnings.push(format!("{name} split is empty"));
        }
    }
    Ok(out)
}

fn split_by_ratio(docs: Vec<Document>, train: f64, dev: f64, test: f64) -> Result<DatasetSplit> {
    if [train, dev, test].iter().any(|r| !(0.0..=1.0).contains(r)) || ((train + dev + test) - 1.0).abs() > 1e-9 {
        return Err(Error::Split(format!(
            "ratios ({train}, {dev}, {test}) must be in [0, 1] and sum to 1"
        )));
    }
    let n = docs.len();
    let n_dev = (n as f64 * dev).round() as usize;
    let n_test = ((n as f64 * test).round() as usize).min(n - n_dev);
    let n_train = n - n_dev - n_test;
    let mut iter = docs.into_iter();
    let train: Vec<_> = iter.by_ref().take(n_train).collect();
    let dev: Vec<_> = iter.by_ref().take(n_dev).collect();
    let test: Vec<_> = iter.collect();
    Ok(DatasetSplit {
        train,
        dev,
        test,
        warnings: Vec::new(),
    })
}

fn split_by_file(docs: Vec<Document>, file: &SplitFile) -> Result<DatasetSplit> {
    let mut by_id: HashMap<String, Document> = HashMap::with_capacity(docs.len());
    let order: Vec<String> = docs.iter().map(|d| d.doc_id().to_string()).collect();
    for d in docs {
        let id = d.doc_id().to_string();
        if by_id.insert(id.clone(), d).is_some() {
            return Err(Error::Split(format!("duplicate doc_id `{id}` in corpus")));
        }
    }
    let mut seen = HashSet::new();
    let mut take = |ids: &[String]| -> Result<Vec<Document>> {
        ids.iter()
            .map(|id| {
                if !seen.insert(id.clone()) {
                    return Err(Error::Split(format!("doc_id `{id}` is listed more than once")));
                }
                by_id
                    .remove(id)
                    .ok_or_else(|| Error::Split(format!("doc_id `{id}` is not in the corpus")))
            })
            .collect()
    };
    let train = take(&file.train)?;
    let dev = take(&file.dev)?;
    let test = take(&file.test)?;
    if let Some(id) = order.iter().find(|id| by_id.contains_key(*id)) {
        return Err(Error::Split(format!("doc_id `{id}` is not assigned to any split")));
    }
    Ok(DatasetSplit {
        train,
        dev,
        test,
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Span;

    fn docs(n: usize) -> Vec<Document> {
        (0..n)
            .map(|i| Document::unannotated(format!("d{i}"), vec!["x".into()], vec![Span::new(0, 1)]).unwrap())
            .collect()
    }

    #[test]
    fn ratio_sizes() {
        let s = split_dataset(docs(10), &SplitSpec::Ratio(0.8, 0.1, 0.1)).unwrap();
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (8, 1, 1));
        assert!(s.warnings.is_empty());
        assert_eq!(s.dev[0].doc_id(), "d8");
    }

    #[test]
    fn all_train_split_warns() {
        let file = SplitFile {
            train: (0..3).map(|i| format!("d{i}")).collect(),
            ..Default::default()
        };
        let s = split_dataset(docs(3), &SplitSpec::File(file)).unwrap();
        assert_eq!(s.train.len(), 3);
        assert!(s.dev.is_empty() && s.test.is_empty());
        assert_eq!(s.warnings.len(), 2);
    }

    #[test]
    fn unknown_id_is_named() {
        let file = SplitFile {
            train: vec!["d0".into(), "X".into()],
            ..Default::default()
        };
        let err = split_dataset(docs(1), &SplitSpec::File(file)).unwrap_err();
        assert!(err.to_string().contains("`X`"), "{err}");
    }

    #[test]
    fn partitions_are_disjoint_and_cover_input() {
        let file = SplitFile {
            train: vec!["d2".into(), "d0".into()],
            dev: vec!["d1".into()],
            test: vec!["d3".into()],
        };
        let s = split_dataset(docs(4), &SplitSpec::File(file)).unwrap();
        let mut ids: Vec<&str> = s
            .train
            .iter()
            .chain(&s.dev)
            .chain(&s.test)
            .map(|d| d.doc_id())
            .collect();
        ids.sort();
        assert_eq!(ids, ["d0", "d1", "d2", "d3"]);
    }

    #[test]
    fn bad_ratios_rejected() {
        assert!(split_dataset(docs(2), &SplitSpec::Ratio(0.5, 0.5, 0.5)).is_err());
    }
}
