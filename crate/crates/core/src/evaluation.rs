//! Strict micro-averaged scoring of joint predictions.
//!
//! A predicted triple is correct only when both its head and tail clusters
//! match a gold cluster exactly (same set of mention spans and, by default,
//! same entity type) and the relation type matches.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, EntityCluster, Span};
use crate::error::{Error, Result};
use crate::pipeline::DocumentPrediction;

/// Canonical cluster identity: sorted mention spans plus (optionally) type.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClusterSignature {
    pub spans: Vec<Span>,
    pub entity_type: Option<usize>,
}

impl ClusterSignature {
    pub fn of(cluster: &EntityCluster, with_type: bool) -> Self {
        let mut spans = cluster.mentions.clone();
        spans.sort();
        spans.dedup();
        Self {
            spans,
            entity_type: with_type.then_some(cluster.entity_type),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StrictTriple {
    pub head: ClusterSignature,
    pub tail: ClusterSignature,
    pub relation_type: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn new(tp: usize, fp: usize, fn_: usize) -> Self {
        Self { tp, fp, fn_ }
    }

    fn from_sets<T: Eq + std::hash::Hash>(pred: &HashSet<T>, gold: &HashSet<T>) -> Self {
        let tp = pred.intersection(gold).count();
        Self::new(tp, pred.len() - tp, gold.len() - tp)
    }
}

impl std::ops::Add for Counts {
    type Output = Counts;

    fn add(self, o: Counts) -> Counts {
        Counts::new(self.tp + o.tp, self.fp + o.fp, self.fn_ + o.fn_)
    }
}

impl std::iter::Sum for Counts {
    fn sum<I: Iterator<Item = Counts>>(iter: I) -> Self {
        iter.fold(Counts::default(), |a, b| a + b)
    }
}

/// Precision, recall and F1 with their counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Pools counts across documents before computing P, R and F1. All ratios
/// are 0 when their denominator is 0.
pub fn micro_f1(counts: impl IntoIterator<Item = Counts>) -> Prf {
    let c: Counts = counts.into_iter().sum();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let p = ratio(c.tp, c.tp + c.fp);
    let r = ratio(c.tp, c.tp + c.fn_);
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    Prf {
        p,
        r,
        f1,
        tp: c.tp,
        fp: c.fp,
        fn_: c.fn_,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EntityReport {
    #[serde(flatten)]
    pub prf: Prf,
    /// Fraction of exactly matched clusters that also carry the gold type.
    pub type_accuracy: f64,
    pub matched_clusters: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub strict: Prf,
    pub mention: Prf,
    pub coref: Prf,
    pub entity: EntityReport,
    /// Relation triples matched on mention sets only, ignoring entity types.
    pub relation_relaxed: Prf,
    pub documents: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Include the entity type in strict cluster signatures.
    pub strict_entity_types: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            strict_entity_types: true,
        }
    }
}

fn strict_triples(
    clusters: &[EntityCluster],
    relations: &[crate::corpus::RelationTriple],
    with_type: bool,
) -> HashSet<StrictTriple> {
    relations
        .iter()
        .map(|r| StrictTriple {
            head: ClusterSignature::of(&clusters[r.head], with_type),
            tail: ClusterSignature::of(&clusters[r.tail], with_type),
            relation_type: r.relation_type,
        })
        .collect()
}

/// Set-based strict triple matching for one document.
pub fn strict_match(pred: &DocumentPrediction, gold: &Document, with_type: bool) -> Result<Counts> {
    check_ids(pred, gold)?;
    let p = strict_triples(&pred.clusters, &pred.relations, with_type);
    let g = strict_triples(gold.clusters(), gold.relations(), with_type);
    Ok(Counts::from_sets(&p, &g))
}

fn check_ids(pred: &DocumentPrediction, gold: &Document) -> Result<()> {
    if pred.doc_id != gold.doc_id() {
        return Err(Error::DocIdMismatch {
            pred: pred.doc_id.clone(),
            gold: gold.doc_id().to_string(),
        });
    }
    Ok(())
}

#[derive(Default)]
struct DocCounts {
    strict: Counts,
    relaxed: Counts,
    mention: Counts,
    coref: Counts,
    entity: Counts,
}

fn score_document(pred: &DocumentPrediction, gold: &Document, config: &EvalConfig) -> Result<DocCounts> {
    check_ids(pred, gold)?;
    let pred_mentions: HashSet<Span> = pred.clusters.iter().flat_map(|c| c.mentions.iter().copied()).collect();
    let gold_mentions: HashSet<Span> = gold.gold_mentions().into_iter().collect();
    let cluster_set = |cs: &[EntityCluster], typed: bool| -> HashSet<ClusterSignature> {
        cs.iter().map(|c| ClusterSignature::of(c, typed)).collect()
    };
    Ok(DocCounts {
        strict: strict_match(pred, gold, config.strict_entity_types)?,
        relaxed: strict_match(pred, gold, false)?,
        mention: Counts::from_sets(&pred_mentions, &gold_mentions),
        coref: Counts::from_sets(
            &cluster_set(&pred.clusters, false),
            &cluster_set(gold.clusters(), false),
        ),
        entity: Counts::from_sets(&cluster_set(&pred.clusters, true), &cluster_set(gold.clusters(), true)),
    })
}

/// Corpus-level report. `preds[i]` must describe `golds[i]`.
pub fn evaluate(preds: &[DocumentPrediction], golds: &[Document], config: &EvalConfig) -> Result<MetricReport> {
    if preds.len() != golds.len() {
        return Err(Error::Config(format!(
            "{} predictions for {} gold documents",
            preds.len(),
            golds.len()
        )));
    }
    let per_doc = preds
        .iter()
        .zip(golds)
        .map(|(p, g)| score_document(p, g, config))
        .collect::<Result<Vec<_>>>()?;
    let coref = micro_f1(per_doc.iter().map(|d| d.coref));
    let entity = micro_f1(per_doc.iter().map(|d| d.entity));
    Ok(MetricReport {
        strict: micro_f1(per_doc.iter().map(|d| d.strict)),
        mention: micro_f1(per_doc.iter().map(|d| d.mention)),
        entity: EntityReport {
            prf: entity,
            type_accuracy: if coref.tp == 0 {
                0.0
            } else {
                entity.tp as f64 / coref.tp as f64
            },
            matched_clusters: coref.tp,
        },
        coref,
        relation_relaxed: micro_f1(per_doc.iter().map(|d| d.relaxed)),
        documents: golds.len(),
    })
}
