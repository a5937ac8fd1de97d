//! Mention detection, coreference, entity typing and relation classification
//! over memory-extended representations.
//!
//! Data flow for one document:
//!
//! ```text
//! tokens ─ encoder ─ X_T ─ memory read/fuse ─ span pooling ─ X_S ─ memory read/fuse
//!   ├─ mention head (sigmoid probe per span)
//!   ├─ coreference head (pair scorer + connected components)
//!   ├─ entity head (cluster max-pool → x_e → softmax(M_E-similarity))
//!   └─ relation head (GRC or MRC pair features → x_p → sigmoid(M_R-similarity))
//! ```
//!
//! Training is teacher-forced: the coreference, entity and relation heads see
//! gold mentions and clusters. Prediction runs the cascade on predicted
//! structures.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::autodiff::{softmax_in_place, stable_sigmoid, Graph, Var};
use crate::corpus::{Document, EntityCluster, RelationTriple, Span, TypeVocabulary};
use crate::encoder::{enumerate_spans, init_width_table, span_matrix, EncoderConfig, TokenEncoder, WIDTH};
use crate::error::{Error, Result};
use crate::memory::{tape, InputKind, MemoryConfig, MemoryModule, MemoryStage, ENTITY_MEMORY, RELATION_MEMORY};
use crate::params::{glorot, uniform, ParamStore};

pub const MENTION_W: &str = "mention.w";
pub const MENTION_B: &str = "mention.b";
pub const COREF_W1: &str = "coref.w1";
pub const COREF_B1: &str = "coref.b1";
pub const COREF_W2: &str = "coref.w2";
pub const COREF_B2: &str = "coref.b2";
pub const ENTITY_W: &str = "entity.w";
pub const ENTITY_B: &str = "entity.b";
pub const ENTITY_WRITE: &str = "entity.write";
pub const PAIR_W: &str = "pair.w";
pub const PAIR_B: &str = "pair.b";
pub const RELATION_WRITE: &str = "relation.write";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationHead {
    /// Pair features from entity-level representations.
    Grc,
    /// Pair features max-pooled over all mention pairs.
    #[default]
    Mrc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub h_e: usize,
    pub h_p: usize,
    pub coref_hidden: usize,
    pub relation_head: RelationHead,
    pub tau_mention: f64,
    pub tau_coref: f64,
    pub tau_rel: f64,
    pub max_negatives: Option<usize>,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            h_e: 32,
            h_p: 32,
            coref_hidden: 32,
            relation_head: RelationHead::Mrc,
            tau_mention: 0.5,
            tau_coref: 0.5,
            tau_rel: 0.5,
            max_negatives: None,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h_e == 0 || self.h_p == 0 || self.coref_hidden == 0 {
            return Err(Error::Config(
                "model.h_e, model.h_p and model.coref_hidden must be positive".into(),
            ));
        }
        for (name, tau) in [
            ("tau_mention", self.tau_mention),
            ("tau_coref", self.tau_coref),
            ("tau_rel", self.tau_rel),
        ] {
            if !(0.0..1.0).contains(&tau) {
                return Err(Error::Config(format!("model.{name} must be in [0, 1), got {tau}")));
            }
        }
        Ok(())
    }
}

/// Probability that a candidate span is a mention.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MentionScore {
    pub span: Span,
    pub score: f64,
}

/// Spans whose probability is strictly above `tau`.
pub fn detect_mentions(spans: &[Span], probabilities: &[f64], tau: f64) -> Vec<MentionScore> {
    spans
        .iter()
        .zip(probabilities)
        .filter(|(_, &p)| p > tau)
        .map(|(&span, &score)| MentionScore { span, score })
        .collect()
}

/// Mentions and symmetric pairwise coreference probabilities.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorefGraph {
    nodes: Vec<Span>,
    edges: BTreeMap<(usize, usize), f64>,
}

impl CorefGraph {
    pub fn new(nodes: Vec<Span>) -> Self {
        Self {
            nodes,
            edges: BTreeMap::new(),
        }
    }

    pub fn nodes(&self) -> &[Span] {
        &self.nodes
    }

    /// Sets the score of the unordered pair `{i, j}`; self-edges are ignored.
    pub fn set_edge(&mut self, i: usize, j: usize, score: f64) {
        if i != j {
            self.edges.insert((i.min(j), i.max(j)), score);
        }
    }

    pub fn edge(&self, i: usize, j: usize) -> Option<f64> {
        self.edges.get(&(i.min(j), i.max(j))).copied()
    }
}

/// Connected components of the graph keeping edges with score `>= tau`.
/// Mentions within a cluster are sorted and clusters are ordered by their
/// smallest mention, so the result does not depend on node order.
pub fn resolve_coreference(graph: &CorefGraph, tau: f64) -> Vec<Vec<Span>> {
    let n = graph.nodes.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (&(i, j), &score) in &graph.edges {
        if score >= tau {
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            if ri != rj {
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<Span>> = BTreeMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(graph.nodes[i]);
    }
    let mut clusters: Vec<Vec<Span>> = groups
        .into_values()
        .map(|mut c| {
            c.sort();
            c.dedup();
            c
        })
        .collect();
    clusters.sort();
    clusters
}

/// Argmax per distribution, ties going to the lowest index.
pub fn classify_entities(distributions: &[Vec<f64>]) -> Vec<usize> {
    distributions.iter().map(|d| argmax(d)).collect()
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// One triple per (pair, relation type) with probability strictly above `tau`.
pub fn classify_relations(pairs: &[(usize, usize)], probabilities: &[Vec<f64>], tau: f64) -> Vec<RelationTriple> {
    let mut out: Vec<RelationTriple> = pairs
        .iter()
        .zip(probabilities)
        .flat_map(|(&(head, tail), probs)| {
            probs
                .iter()
                .enumerate()
                .filter(move |(_, &p)| p > tau)
                .map(move |(relation_type, _)| RelationTriple {
                    head,
                    tail,
                    relation_type,
                })
        })
        .collect();
    out.sort();
    out.dedup();
    out
}

/// `[x_i ; x_j ; x_i ⊙ x_j]` row-wise.
pub fn pair_features(g: &mut Graph, xi: Var, xj: Var) -> Var {
    let prod = g.mul(xi, xj);
    g.concat_cols(&[xi, xj, prod])
}

/// Max over the selected span rows, then `· w + b`.
pub fn represent_entity(g: &mut Graph, span_rows: Var, mention_rows: &[usize], w: Var, b: Var) -> Result<Var> {
    if mention_rows.is_empty() {
        return Err(Error::Shape("entity representation of an empty cluster".into()));
    }
    let pooled = g.max_rows(span_rows, mention_rows);
    let mapped = g.matmul(pooled, w);
    Ok(g.add_row(mapped, b))
}

/// GRC pre-map features for the ordered entity pair `(i, j)`.
pub fn grc_features(g: &mut Graph, entity_reps: Var, i: usize, j: usize) -> Result<Var> {
    if i == j {
        return Err(Error::SelfPair(i));
    }
    let xi = g.row(entity_reps, i);
    let xj = g.row(entity_reps, j);
    Ok(pair_features(g, xi, xj))
}

/// MRC pre-map features: element-wise max of [`pair_features`] over every
/// mention pair `(a ∈ head, b ∈ tail)`.
pub fn mrc_features(g: &mut Graph, span_rows: Var, head_rows: &[usize], tail_rows: &[usize]) -> Result<Var> {
    if head_rows.is_empty() || tail_rows.is_empty() {
        return Err(Error::Shape("mention-pair features need non-empty clusters".into()));
    }
    let (a, b): (Vec<Option<usize>>, Vec<Option<usize>>) = head_rows
        .iter()
        .flat_map(|&a| tail_rows.iter().map(move |&b| (Some(a), Some(b))))
        .unzip();
    let count = a.len();
    let xa = g.gather_rows(span_rows, a);
    let xb = g.gather_rows(span_rows, b);
    let feats = pair_features(g, xa, xb);
    Ok(g.max_rows(feats, &(0..count).collect::<Vec<_>>()))
}

/// Forward state shared by the heads.
pub struct Encoded {
    pub tokens: Var,
    pub span_rows: Var,
    pub spans: Vec<Span>,
    /// Rows `0..candidates` are enumerated candidates; later rows are gold
    /// spans outside the candidate set.
    pub candidates: usize,
    index: HashMap<Span, usize>,
}

impl Encoded {
    pub fn row_of(&self, span: &Span) -> Option<usize> {
        self.index.get(span).copied()
    }
}

/// Per-task summed losses and instance counts for one document.
#[derive(Clone, Copy, Debug, Default)]
pub struct TaskLoss {
    pub sum: Option<Var>,
    pub count: usize,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct DocLosses {
    pub mention: TaskLoss,
    pub coref: TaskLoss,
    pub entity: TaskLoss,
    pub relation: TaskLoss,
}

/// A document's predicted structures.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DocumentPrediction {
    pub doc_id: String,
    pub mentions: Vec<MentionScore>,
    pub clusters: Vec<EntityCluster>,
    pub relations: Vec<RelationTriple>,
}

impl DocumentPrediction {
    /// Gold annotations of `doc` repackaged as a prediction.
    pub fn from_gold(doc: &Document) -> Self {
        Self {
            doc_id: doc.doc_id().to_string(),
            mentions: doc
                .gold_mentions()
                .into_iter()
                .map(|span| MentionScore { span, score: 1.0 })
                .collect(),
            clusters: doc.clusters().to_vec(),
            relations: doc.relations().to_vec(),
        }
    }

    /// `{doc_id, clusters: [{mentions: [[start, end]...], type}], relations: [{h, t, r}]}`.
    pub fn to_json(&self, types: &TypeVocabulary) -> Value {
        json!({
            "doc_id": self.doc_id,
            "clusters": self.clusters.iter().map(|c| json!({
                "mentions": c.mentions.iter().map(|m| [m.start, m.end]).collect::<Vec<_>>(),
                "type": types.entity_label(c.entity_type),
            })).collect::<Vec<_>>(),
            "relations": self.relations.iter().map(|r| json!({
                "h": r.head,
                "t": r.tail,
                "r": types.relation_label(r.relation_type),
            })).collect::<Vec<_>>(),
        })
    }
}

/// The full architecture: encoder, memories and task heads. Parameters live
/// in a separate [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Model {
    types: TypeVocabulary,
    encoder: Arc<dyn TokenEncoder>,
    encoder_config: EncoderConfig,
    memory: MemoryModule,
    heads: HeadConfig,
}

impl Model {
    pub fn new(
        types: TypeVocabulary,
        encoder: Arc<dyn TokenEncoder>,
        encoder_config: EncoderConfig,
        memory_config: MemoryConfig,
        heads: HeadConfig,
    ) -> Result<Self> {
        encoder_config.validate()?;
        memory_config.validate()?;
        heads.validate()?;
        if encoder.hidden_size() != encoder_config.h {
            return Err(Error::Config(format!(
                "encoder produces {} features but encoder.h is {}",
                encoder.hidden_size(),
                encoder_config.h
            )));
        }
        let memory = MemoryModule::new(memory_config, &types, encoder_config.h);
        Ok(Self {
            types,
            encoder,
            encoder_config,
            memory,
            heads,
        })
    }

    pub fn types(&self) -> &TypeVocabulary {
        &self.types
    }

    pub fn encoder(&self) -> &dyn TokenEncoder {
        self.encoder.as_ref()
    }

    pub fn encoder_config(&self) -> &EncoderConfig {
        &self.encoder_config
    }

    pub fn memory(&self) -> &MemoryModule {
        &self.memory
    }

    pub fn memory_mut(&mut self) -> &mut MemoryModule {
        &mut self.memory
    }

    pub fn heads(&self) -> &HeadConfig {
        &self.heads
    }

    /// Fresh parameters; deterministic in `seed`.
    pub fn init_params(&self, seed: u64) -> ParamStore {
        let h = self.encoder_config.h;
        let (h_e, h_p, c) = (self.heads.h_e, self.heads.h_p, self.heads.coref_hidden);
        let mut store = ParamStore::new();
        let mut enc_rng = ChaCha8Rng::seed_from_u64(seed ^ self.encoder_config.seed);
        self.encoder.init_params(&mut store, &mut enc_rng);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_width_table(&mut store, self.encoder_config.l_max, h, &mut rng);
        self.memory.init_params(&mut store, &mut rng);
        store.insert(MENTION_W, glorot(h, 1, &mut rng));
        store.insert(MENTION_B, uniform(1, 1, 0.0, &mut rng));
        store.insert(COREF_W1, glorot(3 * h, c, &mut rng));
        store.insert(COREF_B1, uniform(1, c, 0.0, &mut rng));
        store.insert(COREF_W2, glorot(c, 1, &mut rng));
        store.insert(COREF_B2, uniform(1, 1, 0.0, &mut rng));
        store.insert(ENTITY_W, glorot(h, h_e, &mut rng));
        store.insert(ENTITY_B, uniform(1, h_e, 0.0, &mut rng));
        store.insert(ENTITY_WRITE, glorot(h_e, self.memory.config().s_e, &mut rng));
        let pair_in = match self.heads.relation_head {
            RelationHead::Grc => 3 * h_e,
            RelationHead::Mrc => 3 * h,
        };
        store.insert(PAIR_W, glorot(pair_in, h_p, &mut rng));
        store.insert(PAIR_B, uniform(1, h_p, 0.0, &mut rng));
        store.insert(RELATION_WRITE, glorot(h_p, self.memory.config().s_r, &mut rng));
        store
    }

    /// Encodes the document and applies the memory-extended representation
    /// to both token and span rows. `extra` spans (gold mentions outside the
    /// candidate set) are appended after the candidates.
    pub fn encode(&self, g: &mut Graph, doc: &Document, extra: &[Span], stage: MemoryStage) -> Result<Encoded> {
        let raw_tokens = self.encoder.encode(g, doc)?;
        let tokens = self.memory.enhance(g, raw_tokens, InputKind::Token, stage)?;
        let mut spans = enumerate_spans(doc.sentences(), self.encoder_config.l_max);
        let candidates = spans.len();
        let mut index: HashMap<Span, usize> = spans.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let mut extra: Vec<Span> = extra.iter().copied().filter(|s| !index.contains_key(s)).collect();
        extra.sort();
        extra.dedup();
        for s in extra {
            index.insert(s, spans.len());
            spans.push(s);
        }
        let width = g.param(WIDTH);
        let raw_spans = span_matrix(g, tokens, &spans, width, self.encoder_config.l_max);
        let span_rows = self.memory.enhance(g, raw_spans, InputKind::Span, stage)?;
        Ok(Encoded {
            tokens,
            span_rows,
            spans,
            candidates,
            index,
        })
    }

    /// Mention logits for rows `0..count` of the span matrix, `count × 1`.
    fn mention_logits(&self, g: &mut Graph, enc: &Encoded, count: usize) -> Var {
        let rows = g.gather_rows(enc.span_rows, (0..count).map(Some).collect());
        let w = g.param(MENTION_W);
        let b = g.param(MENTION_B);
        let z = g.matmul(rows, w);
        g.add_row(z, b)
    }

    /// Coreference logits for span-row pairs, `P × 1`.
    fn coref_logits(&self, g: &mut Graph, enc: &Encoded, pairs: &[(usize, usize)]) -> Var {
        let a = g.gather_rows(enc.span_rows, pairs.iter().map(|p| Some(p.0)).collect());
        let b = g.gather_rows(enc.span_rows, pairs.iter().map(|p| Some(p.1)).collect());
        let feats = pair_features(g, a, b);
        let w1 = g.param(COREF_W1);
        let b1 = g.param(COREF_B1);
        let w2 = g.param(COREF_W2);
        let b2 = g.param(COREF_B2);
        let hidden = g.matmul(feats, w1);
        let hidden = g.add_row(hidden, b1);
        let hidden = g.tanh(hidden);
        let out = g.matmul(hidden, w2);
        g.add_row(out, b2)
    }

    /// Entity representations `k × h_e`, one row per cluster of span rows.
    fn entity_reps(&self, g: &mut Graph, enc: &Encoded, clusters: &[Vec<usize>]) -> Result<Var> {
        let w = g.param(ENTITY_W);
        let b = g.param(ENTITY_B);
        let rows = clusters
            .iter()
            .map(|c| represent_entity(g, enc.span_rows, c, w, b))
            .collect::<Result<Vec<_>>>()?;
        Ok(g.concat_rows(&rows))
    }

    /// Entity-type logits (bilinear similarity to `M_E`), `k × K_E`.
    fn entity_logits(&self, g: &mut Graph, reps: Var) -> Result<Var> {
        let m = g.param(ENTITY_MEMORY);
        let w = g.param(ENTITY_WRITE);
        tape::bilinear_similarity(g, reps, m, w)
    }

    /// Pair representations `P × h_p` for ordered cluster pairs.
    fn pair_reps(
        &self,
        g: &mut Graph,
        enc: &Encoded,
        entity_reps: Var,
        clusters: &[Vec<usize>],
        pairs: &[(usize, usize)],
    ) -> Result<Var> {
        let feats = match self.heads.relation_head {
            RelationHead::Grc => {
                for &(i, j) in pairs {
                    if i == j {
                        return Err(Error::SelfPair(i));
                    }
                }
                let xi = g.gather_rows(entity_reps, pairs.iter().map(|p| Some(p.0)).collect());
                let xj = g.gather_rows(entity_reps, pairs.iter().map(|p| Some(p.1)).collect());
                pair_features(g, xi, xj)
            }
            RelationHead::Mrc => {
                let rows = pairs
                    .iter()
                    .map(|&(i, j)| {
                        if i == j {
                            return Err(Error::SelfPair(i));
                        }
                        mrc_features(g, enc.span_rows, &clusters[i], &clusters[j])
                    })
                    .collect::<Result<Vec<_>>>()?;
                g.concat_rows(&rows)
            }
        };
        let w = g.param(PAIR_W);
        let b = g.param(PAIR_B);
        let mapped = g.matmul(feats, w);
        let mapped = g.add_row(mapped, b);
        Ok(g.tanh(mapped))
    }

    /// Relation-type logits (bilinear similarity to `M_R`), `P × K_R`.
    fn relation_logits(&self, g: &mut Graph, pair_reps: Var) -> Result<Var> {
        let m = g.param(RELATION_MEMORY);
        let w = g.param(RELATION_WRITE);
        tape::bilinear_similarity(g, pair_reps, m, w)
    }

    /// Teacher-forced task losses for one annotated document.
    ///
    /// `sampler` is consulted only when `max_negatives` is set.
    pub fn document_losses(
        &self,
        g: &mut Graph,
        doc: &Document,
        stage: MemoryStage,
        sampler: &mut ChaCha8Rng,
    ) -> Result<DocLosses> {
        let gold_spans = doc.gold_mentions();
        let enc = self.encode(g, doc, &gold_spans, stage)?;
        let cap = self.heads.max_negatives;
        let mut out = DocLosses::default();

        // Mentions: every candidate span, gold spans positive.
        let gold_set: std::collections::HashSet<Span> = gold_spans.iter().copied().collect();
        let labels: Vec<f64> = enc.spans[..enc.candidates]
            .iter()
            .map(|s| if gold_set.contains(s) { 1.0 } else { 0.0 })
            .collect();
        let chosen = subsample(&labels, cap, sampler);
        if !chosen.is_empty() {
            let logits = self.mention_logits(g, &enc, enc.candidates);
            let picked = g.gather_rows(logits, chosen.iter().map(|&i| Some(i)).collect());
            let targets = chosen.iter().map(|&i| labels[i]).collect();
            out.mention = TaskLoss {
                sum: Some(g.bce_with_logits(picked, targets)),
                count: chosen.len(),
            };
        }

        // Coreference: unordered pairs of distinct gold spans.
        let mut clusters_of: HashMap<Span, Vec<usize>> = HashMap::new();
        for (span, ci) in doc.mention_records() {
            clusters_of.entry(span).or_default().push(ci);
        }
        let mut pairs = Vec::new();
        let mut labels = Vec::new();
        for (ai, a) in gold_spans.iter().enumerate() {
            for b in &gold_spans[ai + 1..] {
                let same = clusters_of[a].iter().any(|c| clusters_of[b].contains(c));
                pairs.push((
                    enc.row_of(a).expect("gold span row"),
                    enc.row_of(b).expect("gold span row"),
                ));
                labels.push(if same { 1.0 } else { 0.0 });
            }
        }
        let chosen = subsample(&labels, cap, sampler);
        if !chosen.is_empty() {
            let sel: Vec<(usize, usize)> = chosen.iter().map(|&i| pairs[i]).collect();
            let logits = self.coref_logits(g, &enc, &sel);
            out.coref = TaskLoss {
                sum: Some(g.bce_with_logits(logits, chosen.iter().map(|&i| labels[i]).collect())),
                count: chosen.len(),
            };
        }

        // Entities: gold clusters and their types.
        let clusters: Vec<Vec<usize>> = doc
            .clusters()
            .iter()
            .map(|c| {
                c.mentions
                    .iter()
                    .map(|m| enc.row_of(m).expect("gold span row"))
                    .collect()
            })
            .collect();
        if clusters.is_empty() {
            return Ok(out);
        }
        let reps = self.entity_reps(g, &enc, &clusters)?;
        let logits = self.entity_logits(g, reps)?;
        let types = doc.clusters().iter().map(|c| c.entity_type).collect();
        out.entity = TaskLoss {
            sum: Some(g.softmax_cross_entropy(logits, types)),
            count: clusters.len(),
        };

        // Relations: every ordered pair of gold clusters, multi-hot targets.
        let k_r = self.types.num_relation_types();
        let mut pair_list = Vec::new();
        let mut positive = Vec::new();
        for i in 0..clusters.len() {
            for j in 0..clusters.len() {
                if i != j {
                    pair_list.push((i, j));
                    positive.push(if doc.relations().iter().any(|r| r.head == i && r.tail == j) {
                        1.0
                    } else {
                        0.0
                    });
                }
            }
        }
        let chosen = subsample(&positive, cap, sampler);
        if !chosen.is_empty() {
            let sel: Vec<(usize, usize)> = chosen.iter().map(|&i| pair_list[i]).collect();
            let reps = self.pair_reps(g, &enc, reps, &clusters, &sel)?;
            let logits = self.relation_logits(g, reps)?;
            let mut targets = vec![0.0; sel.len() * k_r];
            for r in doc.relations() {
                if let Some(p) = sel.iter().position(|&(i, j)| i == r.head && j == r.tail) {
                    targets[p * k_r + r.relation_type] = 1.0;
                }
            }
            out.relation = TaskLoss {
                sum: Some(g.bce_with_logits(logits, targets)),
                count: sel.len() * k_r,
            };
        }
        Ok(out)
    }

    /// Runs the predicted cascade: mentions → clusters → types → relations.
    pub fn predict_document(
        &self,
        params: &ParamStore,
        doc: &Document,
        stage: MemoryStage,
    ) -> Result<DocumentPrediction> {
        let mut g = Graph::new(params);
        let enc = self.encode(&mut g, doc, &[], stage)?;
        let mut prediction = DocumentPrediction {
            doc_id: doc.doc_id().to_string(),
            ..Default::default()
        };

        let logits = self.mention_logits(&mut g, &enc, enc.candidates);
        let probs: Vec<f64> = g.value(logits).as_slice().iter().map(|&z| stable_sigmoid(z)).collect();
        prediction.mentions = detect_mentions(&enc.spans[..enc.candidates], &probs, self.heads.tau_mention);
        if prediction.mentions.is_empty() {
            return Ok(prediction);
        }

        let nodes: Vec<Span> = prediction.mentions.iter().map(|m| m.span).collect();
        let mut graph = CorefGraph::new(nodes.clone());
        let mut pairs = Vec::new();
        let mut index_pairs = Vec::new();
        for i in 0..nodes.len() {
            for j in i + 1..nodes.len() {
                pairs.push((enc.row_of(&nodes[i]).unwrap(), enc.row_of(&nodes[j]).unwrap()));
                index_pairs.push((i, j));
            }
        }
        if !pairs.is_empty() {
            let logits = self.coref_logits(&mut g, &enc, &pairs);
            for (&(i, j), &z) in index_pairs.iter().zip(g.value(logits).as_slice()) {
                graph.set_edge(i, j, stable_sigmoid(z));
            }
        }
        let clusters = resolve_coreference(&graph, self.heads.tau_coref);
        let cluster_rows: Vec<Vec<usize>> = clusters
            .iter()
            .map(|c| c.iter().map(|m| enc.row_of(m).unwrap()).collect())
            .collect();

        let reps = self.entity_reps(&mut g, &enc, &cluster_rows)?;
        let logits = self.entity_logits(&mut g, reps)?;
        let distributions: Vec<Vec<f64>> = g
            .value(logits)
            .to_rows()
            .into_iter()
            .map(|mut row| {
                softmax_in_place(&mut row);
                row
            })
            .collect();
        let types = classify_entities(&distributions);
        prediction.clusters = clusters
            .into_iter()
            .zip(types)
            .map(|(mentions, t)| EntityCluster::new(mentions, t))
            .collect();

        let k = cluster_rows.len();
        let pairs: Vec<(usize, usize)> = (0..k)
            .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
            .collect();
        if !pairs.is_empty() {
            let reps = self.pair_reps(&mut g, &enc, reps, &cluster_rows, &pairs)?;
            let logits = self.relation_logits(&mut g, reps)?;
            let probs: Vec<Vec<f64>> = g
                .value(logits)
                .to_rows()
                .into_iter()
                .map(|row| row.into_iter().map(stable_sigmoid).collect())
                .collect();
            prediction.relations = classify_relations(&pairs, &probs, self.heads.tau_rel);
        }
        Ok(prediction)
    }
}

/// Indices to train on: all positives plus at most `cap` negatives (all
/// negatives when `cap` is `None`). Returned in ascending order.
fn subsample(labels: &[f64], cap: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let Some(cap) = cap else {
        return (0..labels.len()).collect();
    };
    let (mut keep, mut negatives): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| labels[i] > 0.0);
    if negatives.len() > cap {
        negatives.shuffle(rng);
        negatives.truncate(cap);
    }
    keep.extend(negatives);
    keep.sort_unstable();
    keep
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_is_strict() {
        let spans = [Span::new(0, 1), Span::new(1, 2)];
        assert!(detect_mentions(&spans, &[0.5, 0.5], 0.5).is_empty());
        let found = detect_mentions(&spans, &[0.2, 0.9], 0.5);
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].span, spans[1]);
    }

    #[test]
    fn coref_components() {
        let nodes = vec![Span::new(0, 1), Span::new(2, 3), Span::new(4, 5)];
        let mut g = CorefGraph::new(nodes.clone());
        g.set_edge(0, 1, 0.9);
        g.set_edge(1, 2, 0.7);
        g.set_edge(0, 2, 0.1);
        assert_eq!(resolve_coreference(&g, 0.5), vec![nodes.clone()]);
        let mut empty = CorefGraph::new(nodes.clone());
        empty.set_edge(0, 1, 0.2);
        assert_eq!(resolve_coreference(&empty, 0.5).len(), 3);
        assert_eq!(empty.edge(1, 0), Some(0.2));
        empty.set_edge(2, 2, 1.0);
        assert_eq!(empty.edge(2, 2), None);
    }

    #[test]
    fn argmax_tie_breaks_low() {
        assert_eq!(
            classify_entities(&[vec![1.0 / 3.0; 3], vec![0.1, 0.8, 0.1]]),
            vec![0, 1]
        );
    }

    #[test]
    fn relation_threshold_and_counting() {
        let pairs = [(0, 1), (1, 0)];
        assert!(classify_relations(&pairs, &[vec![0.5], vec![0.5]], 0.5).is_empty());
        let t = classify_relations(&pairs, &[vec![0.9], vec![0.8]], 0.5);
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn subsample_keeps_positives() {
        let labels = [0.0, 1.0, 0.0, 0.0, 1.0, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = subsample(&labels, Some(1), &mut rng);
        assert_eq!(s.len(), 3);
        assert!(s.contains(&1) && s.contains(&4));
        assert_eq!(subsample(&labels, None, &mut rng).len(), 6);
    }
}
