//! Joint multi-task optimisation with a two-stage memory schedule.
//!
//! The joint objective is `β_M·L_M + β_C·L_C + β_E·L_E + β_R·L_R`, where each
//! task loss is the mean over its instances in the batch. During the memory
//! warm-up stage the read path is bypassed while the classifier losses keep
//! writing the memories.

mod optim;
mod schedule;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalConfig, Prf};
use crate::memory::MemoryStage;
use crate::params::ParamStore;
use crate::pipeline::{DocumentPrediction, Model, TaskLoss};
use crate::tensor::Matrix;

pub use optim::{clip_global_norm, AdamW};
pub use schedule::{inference_stage, lr_at, lr_at_with_warmup, memory_stage, LR_WARMUP_FRACTION};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    AdamW,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    #[serde(rename = "beta_M")]
    pub beta_mention: f64,
    #[serde(rename = "beta_C")]
    pub beta_coref: f64,
    #[serde(rename = "beta_E")]
    pub beta_entity: f64,
    #[serde(rename = "beta_R")]
    pub beta_relation: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_warmup_fraction: f64,
    pub epochs: usize,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta_mention: 1.0,
            beta_coref: 1.0,
            beta_entity: 1.0,
            beta_relation: 1.0,
            batch_size: 2,
            learning_rate: 5e-5,
            lr_warmup_fraction: LR_WARMUP_FRACTION,
            epochs: 20,
            weight_decay: 0.01,
            grad_clip: Some(1.0),
            seed: 0,
            optimizer: OptimizerKind::AdamW,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.betas().iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Error::Config(
                "loss weights train.beta_* must be finite and non-negative".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config("train.learning_rate must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.lr_warmup_fraction) {
            return Err(Error::Config("train.lr_warmup_fraction must be in [0, 1]".into()));
        }
        if self.grad_clip.is_some_and(|c| c.is_nan() || c <= 0.0) {
            return Err(Error::Config("train.grad_clip must be positive when set".into()));
        }
        Ok(())
    }

    pub fn betas(&self) -> [f64; 4] {
        [self.beta_mention, self.beta_coref, self.beta_entity, self.beta_relation]
    }

    pub fn seeds(&self) -> SeedPlan {
        SeedPlan::derive(self.seed)
    }

    pub fn total_steps(&self, train_docs: usize) -> usize {
        self.epochs * train_docs.div_ceil(self.batch_size)
    }
}

/// Independent seeds for parameter init, batch shuffling and negative
/// sampling, all derived from one master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPlan {
    pub init: u64,
    pub shuffle: u64,
    pub sampling: u64,
}

impl SeedPlan {
    pub fn derive(master: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master);
        Self {
            init: rng.next_u64(),
            shuffle: rng.next_u64(),
            sampling: rng.next_u64(),
        }
    }
}

/// Per-task mean losses and their weighted combination.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mention: f64,
    pub coref: f64,
    pub entity: f64,
    pub relation: f64,
    pub joint: f64,
}

impl LossBreakdown {
    fn accumulate(&mut self, other: &LossBreakdown) {
        self.mention += other.mention;
        self.coref += other.coref;
        self.entity += other.entity;
        self.relation += other.relation;
        self.joint += other.joint;
    }

    fn scaled(mut self, s: f64) -> Self {
        self.mention *= s;
        self.coref *= s;
        self.entity *= s;
        self.relation *= s;
        self.joint *= s;
        self
    }
}

fn mean_loss(g: &mut Graph, parts: &[TaskLoss]) -> Option<Var> {
    let count: usize = parts.iter().map(|p| p.count).sum();
    let mut total: Option<Var> = None;
    for sum in parts.iter().filter_map(|p| p.sum) {
        total = Some(match total {
            Some(t) => g.add(t, sum),
            None => sum,
        });
    }
    total.map(|t| g.scale(t, 1.0 / count as f64))
}

/// Records the batch losses on `g` and returns their values plus the joint
/// loss node.
pub fn compute_losses(
    model: &Model,
    g: &mut Graph,
    batch: &[&Document],
    stage: MemoryStage,
    betas: [f64; 4],
    sampler: &mut ChaCha8Rng,
) -> Result<(LossBreakdown, Var)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let per_doc = batch
        .iter()
        .map(|d| model.document_losses(g, d, stage, sampler))
        .collect::<Result<Vec<_>>>()?;
    let tasks = [
        mean_loss(g, &per_doc.iter().map(|d| d.mention).collect::<Vec<_>>()),
        mean_loss(g, &per_doc.iter().map(|d| d.coref).collect::<Vec<_>>()),
        mean_loss(g, &per_doc.iter().map(|d| d.entity).collect::<Vec<_>>()),
        mean_loss(g, &per_doc.iter().map(|d| d.relation).collect::<Vec<_>>()),
    ];
    let values: Vec<f64> = tasks.iter().map(|t| t.map_or(0.0, |v| g.scalar(v))).collect();
    let mut joint = g.constant(Matrix::zeros(1, 1));
    for (task, beta) in tasks.iter().zip(betas) {
        if let Some(t) = *task {
            let weighted = g.scale(t, beta);
            joint = g.add(joint, weighted);
        }
    }
    let breakdown = LossBreakdown {
        mention: values[0],
        coref: values[1],
        entity: values[2],
        relation: values[3],
        joint: g.scalar(joint),
    };
    Ok((breakdown, joint))
}

/// Losses and per-parameter gradients for one batch.
pub fn batch_gradients(
    model: &Model,
    params: &ParamStore,
    batch: &[&Document],
    stage: MemoryStage,
    betas: [f64; 4],
    sampler: &mut ChaCha8Rng,
) -> Result<(LossBreakdown, BTreeMap<String, Matrix>)> {
    let mut g = Graph::new(params);
    let (losses, joint) = compute_losses(model, &mut g, batch, stage, betas, sampler)?;
    let grads = g.backward(joint);
    Ok((losses, g.param_gradients(&grads)))
}

/// Predicts every document with the given memory stage.
pub fn predict_all(
    model: &Model,
    params: &ParamStore,
    docs: &[Document],
    stage: MemoryStage,
) -> Result<Vec<DocumentPrediction>> {
    docs.iter().map(|d| model.predict_document(params, d, stage)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub stage: MemoryStage,
    /// Mean over the epoch's batches.
    pub loss: LossBreakdown,
    /// Split used for model selection (`dev`, or `train` when dev is empty).
    pub selection_split: String,
    pub selection: Prf,
    pub best: bool,
}

pub struct StepInfo<'a> {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub stage: MemoryStage,
    pub losses: &'a LossBreakdown,
    /// Gradients before clipping.
    pub gradients: &'a BTreeMap<String, Matrix>,
}

/// Hooks into the training loop. Errors abort training.
pub trait TrainObserver {
    fn on_step(&mut self, _info: &StepInfo<'_>) -> Result<()> {
        Ok(())
    }

    fn on_epoch(&mut self, _record: &EpochRecord, _params: &ParamStore) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best_params: ParamStore,
    pub best_epoch: usize,
    pub best_score: f64,
    pub final_params: ParamStore,
    pub log: Vec<EpochRecord>,
    pub total_steps: usize,
}

/// Trains from fresh parameters initialised with the config's seed plan.
pub fn train(
    model: &Model,
    train_docs: &[Document],
    dev_docs: &[Document],
    config: &TrainConfig,
    eval: &EvalConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    let params = model.init_params(config.seeds().init);
    train_from(model, params, train_docs, dev_docs, config, eval, observer)
}

pub fn train_from(
    model: &Model,
    mut params: ParamStore,
    train_docs: &[Document],
    dev_docs: &[Document],
    config: &TrainConfig,
    eval: &EvalConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_docs.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    if let Some(d) = train_docs.iter().find(|d| !d.is_annotated()) {
        return Err(Error::validation(d.doc_id(), "training documents must be annotated"));
    }
    let total_steps = config.total_steps(train_docs.len());
    let mut outcome = TrainOutcome {
        best_params: params.clone(),
        best_epoch: 0,
        best_score: f64::NEG_INFINITY,
        final_params: params.clone(),
        log: Vec::new(),
        total_steps,
    };
    if config.epochs == 0 {
        return Ok(outcome);
    }

    let proportion = model.memory().config().warmup_proportion;
    let seeds = config.seeds();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seeds.shuffle);
    let mut sampler = ChaCha8Rng::seed_from_u64(seeds.sampling);
    let mut optimizer = match config.optimizer {
        OptimizerKind::AdamW => AdamW::new(config.weight_decay),
    };
    let (selection_docs, selection_split) = if dev_docs.is_empty() {
        (train_docs, "train")
    } else {
        (dev_docs, "dev")
    };

    let mut order: Vec<usize> = (0..train_docs.len()).collect();
    let mut step = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = LossBreakdown::default();
        let mut batches = 0;
        let mut lr = 0.0;
        let mut stage = MemoryStage::Full;
        for (batch_id, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Document> = chunk.iter().map(|&i| &train_docs[i]).collect();
            stage = memory_stage(step, total_steps, proportion);
            lr = lr_at_with_warmup(step, total_steps, config.learning_rate, config.lr_warmup_fraction)?;
            let (losses, mut grads) = batch_gradients(model, &params, &batch, stage, config.betas(), &mut sampler)?;
            if !losses.joint.is_finite() || grads.values().any(|g| !g.is_finite()) {
                let norms = params
                    .norms()
                    .iter()
                    .map(|(k, v)| format!("{k}={v:.4e}"))
                    .collect::<Vec<_>>()
                    .join(", ");
                return Err(Error::NonFiniteLoss {
                    batch: batch_id,
                    step,
                    norms,
                });
            }
            observer.on_step(&StepInfo {
                epoch,
                step,
                lr,
                stage,
                losses: &losses,
                gradients: &grads,
            })?;
            if let Some(clip) = config.grad_clip {
                clip_global_norm(&mut grads, clip);
            }
            optimizer.step(&mut params, &grads, lr);
            epoch_loss.accumulate(&losses);
            batches += 1;
            step += 1;
        }

        let eval_stage = inference_stage(step, total_steps, proportion);
        let preds = predict_all(model, &params, selection_docs, eval_stage)?;
        let report = evaluate(&preds, selection_docs, eval)?;
        let best = report.strict.f1 > outcome.best_score;
        if best {
            outcome.best_score = report.strict.f1;
            outcome.best_epoch = epoch;
            outcome.best_params = params.clone();
        }
        let record = EpochRecord {
            epoch,
            step,
            lr,
            stage,
            loss: epoch_loss.scaled(1.0 / batches as f64),
            selection_split: selection_split.to_string(),
            selection: report.strict,
            best,
        };
        observer.on_epoch(&record, &params)?;
        outcome.log.push(record);
    }
    outcome.final_params = params;
    Ok(outcome)
}
