//! Category memories and the attention read / similarity write paths.
//!
//! Two memory matrices hold one slot per category: `M_E` (entity types) and
//! `M_R` (relation types). They are used in two directions:
//!
//! * **Read.** Each memory queries an input matrix `X` (token rows or span
//!   rows). For memory `M` (`m × s`) and read projection `W` (`s × h`) the
//!   logits `M · W · Xᵀ` (`m × n`) are softmax-normalised along the input axis
//!   and summed over slots, giving one weight per input row. The weights
//!   rescale the rows of `X`, and the plain input and the two rescaled copies
//!   are averaged element-wise.
//! * **Write.** There is no separate write pass. Entity and relation
//!   classifiers score an instance `x` against every slot with the bilinear
//!   similarity `M · Wᵀ · x`; the classification losses then update `M`
//!   through ordinary gradient descent, so each slot drifts toward the
//!   representations of its category.
//!
//! With the read gradient disabled the memories are treated as constants on
//! the read path and are updated only by the classifier losses.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_in_place, stable_sigmoid, Graph, Var};
use crate::corpus::TypeVocabulary;
use crate::error::{Error, Result};
use crate::params::{glorot, uniform, ParamStore};
use crate::tensor::Matrix;

pub const ENTITY_MEMORY: &str = "memory.entity";
pub const RELATION_MEMORY: &str = "memory.relation";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MemoryKind {
    Entity,
    Relation,
}

impl MemoryKind {
    pub fn param(self) -> &'static str {
        match self {
            MemoryKind::Entity => ENTITY_MEMORY,
            MemoryKind::Relation => RELATION_MEMORY,
        }
    }
}

/// Which representation a read extends.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum InputKind {
    Token,
    Span,
}

pub fn read_projection_name(input: InputKind, memory: MemoryKind) -> &'static str {
    match (input, memory) {
        (InputKind::Token, MemoryKind::Entity) => "memory.read.token_entity",
        (InputKind::Token, MemoryKind::Relation) => "memory.read.token_relation",
        (InputKind::Span, MemoryKind::Entity) => "memory.read.span_entity",
        (InputKind::Span, MemoryKind::Relation) => "memory.read.span_relation",
    }
}

/// Training phase with respect to memory reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryStage {
    /// Reads are bypassed; fusion returns its input unchanged.
    Warmup,
    /// Reads are active for every enabled path.
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemoryConfig {
    #[serde(rename = "s_E")]
    pub s_e: usize,
    #[serde(rename = "s_R")]
    pub s_r: usize,
    #[serde(rename = "read_TE")]
    pub read_token_entity: bool,
    #[serde(rename = "read_TR")]
    pub read_token_relation: bool,
    #[serde(rename = "read_SE")]
    pub read_span_entity: bool,
    #[serde(rename = "read_SR")]
    pub read_span_relation: bool,
    pub read_gradient: bool,
    pub warmup_proportion: f64,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            s_e: 16,
            s_r: 16,
            read_token_entity: true,
            read_token_relation: true,
            read_span_entity: true,
            read_span_relation: true,
            read_gradient: false,
            warmup_proportion: 0.4,
        }
    }
}

impl MemoryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s_e == 0 || self.s_r == 0 {
            return Err(Error::Config("memory slot sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_proportion) {
            return Err(Error::Config(format!(
                "memory.warmup_proportion must be in [0, 1], got {}",
                self.warmup_proportion
            )));
        }
        Ok(())
    }

    pub fn read_enabled(&self, input: InputKind, memory: MemoryKind) -> bool {
        match (input, memory) {
            (InputKind::Token, MemoryKind::Entity) => self.read_token_entity,
            (InputKind::Token, MemoryKind::Relation) => self.read_token_relation,
            (InputKind::Span, MemoryKind::Entity) => self.read_span_entity,
            (InputKind::Span, MemoryKind::Relation) => self.read_span_relation,
        }
    }

    pub fn set_all_reads(&mut self, enabled: bool) {
        self.read_token_entity = enabled;
        self.read_token_relation = enabled;
        self.read_span_entity = enabled;
        self.read_span_relation = enabled;
    }

    pub fn any_read_enabled(&self) -> bool {
        self.read_token_entity || self.read_token_relation || self.read_span_entity || self.read_span_relation
    }
}

/// Memories plus read projections, parameterised by a type vocabulary.
#[derive(Clone, Debug)]
pub struct MemoryModule {
    config: MemoryConfig,
    entity_slots: usize,
    relation_slots: usize,
    hidden: usize,
}

impl MemoryModule {
    /// One slot per entity type and one per relation type.
    pub fn new(config: MemoryConfig, vocab: &TypeVocabulary, hidden: usize) -> Self {
        Self {
            config,
            entity_slots: vocab.num_entity_types(),
            relation_slots: vocab.num_relation_types(),
            hidden,
        }
    }

    pub fn config(&self) -> &MemoryConfig {
        &self.config
    }

    pub fn slots(&self, kind: MemoryKind) -> usize {
        match kind {
            MemoryKind::Entity => self.entity_slots,
            MemoryKind::Relation => self.relation_slots,
        }
    }

    pub fn slot_size(&self, kind: MemoryKind) -> usize {
        match kind {
            MemoryKind::Entity => self.config.s_e,
            MemoryKind::Relation => self.config.s_r,
        }
    }

    /// Controls whether read attention propagates gradient into the memories.
    pub fn set_read_gradient(&mut self, flag: bool) {
        self.config.read_gradient = flag;
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        for kind in [MemoryKind::Entity, MemoryKind::Relation] {
            let s = self.slot_size(kind);
            let bound = 1.0 / (s as f64).sqrt();
            store.insert(kind.param(), uniform(self.slots(kind), s, bound, rng));
        }
        for input in [InputKind::Token, InputKind::Span] {
            for kind in [MemoryKind::Entity, MemoryKind::Relation] {
                let s = self.slot_size(kind);
                store.insert(read_projection_name(input, kind), glorot(s, self.hidden, rng));
            }
        }
    }

    /// Memory node as seen by the read path.
    fn read_memory(&self, g: &mut Graph, kind: MemoryKind) -> Var {
        let m = g.param(kind.param());
        if self.config.read_gradient {
            m
        } else {
            g.detach(m)
        }
    }

    /// Extended representation of `x`: the element-wise mean of `x` and its
    /// entity- and relation-memory rescalings. Disabled paths contribute `x`.
    pub fn enhance(&self, g: &mut Graph, x: Var, input: InputKind, stage: MemoryStage) -> Result<Var> {
        if stage == MemoryStage::Warmup {
            return Ok(x);
        }
        let mut extended = Vec::with_capacity(2);
        for kind in [MemoryKind::Entity, MemoryKind::Relation] {
            if self.config.read_enabled(input, kind) && self.slots(kind) > 0 {
                let m = self.read_memory(g, kind);
                let w = g.param(read_projection_name(input, kind));
                let a = tape::read_weights(g, x, m, w)?;
                extended.push(tape::extend_representation(g, x, a));
            } else {
                extended.push(x);
            }
        }
        Ok(tape::fuse(g, x, extended[0], extended[1]))
    }
}

/// Graph-recording versions of the memory operations.
pub mod tape {
    use super::*;

    /// Attention weights over the rows of `x`, as an `n × 1` column.
    pub fn read_weights(g: &mut Graph, x: Var, memory: Var, projection: Var) -> Result<Var> {
        let (_, h) = g.shape(x);
        let (_, s) = g.shape(memory);
        let (ws, wh) = g.shape(projection);
        if ws != s || wh != h {
            return Err(Error::Shape(format!(
                "read projection is {ws}x{wh}, expected {s}x{h} (slot size x embedding size)"
            )));
        }
        let query = g.matmul(memory, projection);
        let xt = g.transpose(x);
        let logits = g.matmul(query, xt);
        let attention = g.softmax_rows(logits);
        let summed = g.sum_rows(attention);
        Ok(g.transpose(summed))
    }

    pub fn extend_representation(g: &mut Graph, x: Var, weights: Var) -> Var {
        g.mul_col(x, weights)
    }

    pub fn fuse(g: &mut Graph, x: Var, extended_entity: Var, extended_relation: Var) -> Var {
        let s = g.add(x, extended_entity);
        let s = g.add(s, extended_relation);
        g.scale(s, 1.0 / 3.0)
    }

    /// Bilinear scores of each row of `x` (`k × d`) against each slot:
    /// `x · W · Mᵀ`, shape `k × m`.
    pub fn bilinear_similarity(g: &mut Graph, x: Var, memory: Var, write: Var) -> Result<Var> {
        let (_, d) = g.shape(x);
        let (_, s) = g.shape(memory);
        let (wd, ws) = g.shape(write);
        if wd != d || ws != s {
            return Err(Error::Shape(format!(
                "write projection is {wd}x{ws}, expected {d}x{s} (representation size x slot size)"
            )));
        }
        let proj = g.matmul(x, write);
        let mt = g.transpose(memory);
        Ok(g.matmul(proj, mt))
    }
}

fn eval_on_graph<T>(f: impl FnOnce(&mut Graph) -> Result<T>) -> Result<T> {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    f(&mut g)
}

/// Attention weights `a` for input `x` (`n × h`), memory `m` (`m × s`) and
/// read projection `w` (`s × h`). Entries lie in `(0, m)` and sum to `m`.
pub fn read_weights(x: &Matrix, memory: &Matrix, projection: &Matrix) -> Result<Vec<f64>> {
    eval_on_graph(|g| {
        let x = g.constant(x.clone());
        let m = g.constant(memory.clone());
        let w = g.constant(projection.clone());
        let a = tape::read_weights(g, x, m, w)?;
        Ok(g.value(a).as_slice().to_vec())
    })
}

/// `diag(a) · x`.
pub fn extend_representation(x: &Matrix, weights: &[f64]) -> Result<Matrix> {
    if weights.len() != x.rows() {
        return Err(Error::Shape(format!("{} weights for {} rows", weights.len(), x.rows())));
    }
    eval_on_graph(|g| {
        let xv = g.constant(x.clone());
        let a = g.constant(Matrix::column_vector(weights));
        let out = tape::extend_representation(g, xv, a);
        Ok(g.value(out).clone())
    })
}

/// Element-wise mean of three equally shaped matrices.
pub fn fuse(x: &Matrix, extended_entity: &Matrix, extended_relation: &Matrix) -> Result<Matrix> {
    if x.shape() != extended_entity.shape() || x.shape() != extended_relation.shape() {
        return Err(Error::Shape("fusion inputs must have equal shapes".into()));
    }
    eval_on_graph(|g| {
        let a = g.constant(x.clone());
        let b = g.constant(extended_entity.clone());
        let c = g.constant(extended_relation.clone());
        let out = tape::fuse(g, a, b, c);
        Ok(g.value(out).clone())
    })
}

/// Similarity of `x` (length `d`) to each memory slot: `M · Wᵀ · x`.
pub fn bilinear_similarity(x: &[f64], memory: &Matrix, write: &Matrix) -> Result<Vec<f64>> {
    eval_on_graph(|g| {
        let xv = g.constant(Matrix::row_vector(x));
        let m = g.constant(memory.clone());
        let w = g.constant(write.clone());
        let s = tape::bilinear_similarity(g, xv, m, w)?;
        Ok(g.value(s).as_slice().to_vec())
    })
}

/// Softmax over entity-type similarities.
pub fn entity_type_distribution(x: &[f64], memory: &Matrix, write: &Matrix) -> Result<Vec<f64>> {
    let mut scores = bilinear_similarity(x, memory, write)?;
    softmax_in_place(&mut scores);
    Ok(scores)
}

/// Independent per-type sigmoid over relation-type similarities.
pub fn relation_type_probabilities(x: &[f64], memory: &Matrix, write: &Matrix) -> Result<Vec<f64>> {
    Ok(bilinear_similarity(x, memory, write)?
        .into_iter()
        .map(stable_sigmoid)
        .collect())
}
