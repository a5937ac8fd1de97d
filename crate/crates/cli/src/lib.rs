//! Command-line front end: `train`, `evaluate`, `predict` and `convert-cdr`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use memrex::checkpoint::{load_checkpoint, save_checkpoint, CheckpointState, LoadedCheckpoint};
use memrex::config::RunConfig;
use memrex::corpus::{
    convert_pubtator, load_docred, split_dataset, write_docred, Document, SplitFile, SplitSpec, TypeVocabulary,
};
use memrex::encoder::TokenVocab;
use memrex::evaluation::{evaluate, EvalConfig, MetricReport};
use memrex::params::ParamStore;
use memrex::pipeline::{DocumentPrediction, Model};
use memrex::training::{predict_all, train, EpochRecord, TrainObserver};
use memrex::{Error, Result};
use serde_json::json;

/// Relative `output.dir` values are resolved against this directory when set.
pub const OUTPUT_ROOT_ENV: &str = "MEMREX_OUTPUT_ROOT";

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const METRICS_LOG: &str = "metrics.jsonl";
pub const DEV_REPORT: &str = "dev_report.json";
pub const TEST_REPORT: &str = "test_report.json";

#[derive(Debug, Parser)]
#[command(
    name = "memrex",
    version,
    about = "Memory-enhanced joint entity and relation extraction"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a flat JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a checkpoint on an annotated corpus.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Split name; selects documents when `--split-file` is given.
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        split_file: Option<PathBuf>,
        /// Score the gold annotations as predictions.
        #[arg(long)]
        gold_passthrough: bool,
        /// Report path. Defaults to `<split>_report.json` beside the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write per-document predictions.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a PubTator file (CDR) to DocRED JSON.
    ConvertCdr {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// 2 for bad input (config, vocabulary, missing or malformed files), 1 for
/// failures during a run (training aborts, corrupt checkpoints).
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NonFiniteLoss { .. } | Error::Checkpoint(_) => 1,
        _ => 2,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config } => cmd_train(&config),
        Command::Evaluate {
            checkpoint,
            data,
            split,
            split_file,
            gold_passthrough,
            out,
        } => cmd_evaluate(
            &checkpoint,
            &data,
            &split,
            split_file.as_deref(),
            gold_passthrough,
            out.as_deref(),
        ),
        Command::Predict { checkpoint, data, out } => cmd_predict(&checkpoint, &data, &out),
        Command::ConvertCdr { input, out } => cmd_convert_cdr(&input, &out),
    }
}

/// `output.dir`, placed under `$MEMREX_OUTPUT_ROOT` when relative.
pub fn output_dir(config: &RunConfig) -> PathBuf {
    let dir = &config.output.dir;
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir.clone(),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("JSON value serializes");
    std::fs::write(path, text + "\n").map_err(|e| io_error(path, e))
}

/// Union of the labels of several vocabularies, sorted.
fn merge_vocabularies(vocabs: &[TypeVocabulary]) -> Result<TypeVocabulary> {
    TypeVocabulary::from_labels(
        vocabs.iter().flat_map(|v| v.entity_types()).map(String::as_str),
        vocabs.iter().flat_map(|v| v.relation_types()).map(String::as_str),
    )
}

/// Loads every file against one vocabulary: the given one, or the union of
/// the labels found in all files.
fn load_corpora(paths: &[&Path], vocab: Option<TypeVocabulary>) -> Result<(Vec<Vec<Document>>, TypeVocabulary)> {
    let vocab = match vocab {
        Some(v) => v,
        None => {
            let found = paths
                .iter()
                .map(|p| load_docred(p, None).map(|(_, v)| v))
                .collect::<Result<Vec<_>>>()?;
            merge_vocabularies(&found)?
        }
    };
    let docs = paths
        .iter()
        .map(|p| load_docred(p, Some(&vocab)).map(|(d, _)| d))
        .collect::<Result<Vec<_>>>()?;
    Ok((docs, vocab))
}

struct Splits {
    train: Vec<Document>,
    dev: Vec<Document>,
    test: Vec<Document>,
    types: TypeVocabulary,
}

fn load_splits(config: &RunConfig) -> Result<Splits> {
    let data = &config.data;
    let train_path = data
        .train
        .as_deref()
        .ok_or_else(|| Error::Config("`data.train` is required for training".into()))?;
    let vocab = data.vocab.as_deref().map(TypeVocabulary::load).transpose()?;
    if let Some(split_path) = data.split_file.as_deref() {
        if data.dev.is_some() || data.test.is_some() {
            return Err(Error::Config(
                "`data.split_file` partitions `data.train`; do not also set `data.dev` or `data.test`".into(),
            ));
        }
        let split_file = SplitFile::load(split_path)?;
        let (mut docs, types) = load_corpora(&[train_path], vocab)?;
        let parts = split_dataset(docs.remove(0), &SplitSpec::File(split_file))?;
        for w in &parts.warnings {
            eprintln!("warning: {w}");
        }
        return Ok(Splits {
            train: parts.train,
            dev: parts.dev,
            test: parts.test,
            types,
        });
    }
    let mut paths = vec![train_path];
    paths.extend(data.dev.as_deref());
    paths.extend(data.test.as_deref());
    let (mut docs, types) = load_corpora(&paths, vocab)?;
    let test = if data.test.is_some() {
        docs.pop().unwrap_or_default()
    } else {
        Vec::new()
    };
    let dev = if data.dev.is_some() {
        docs.pop().unwrap_or_default()
    } else {
        Vec::new()
    };
    let train = docs.pop().unwrap_or_default();
    Ok(Splits {
        train,
        dev,
        test,
        types,
    })
}

/// Appends one JSON line per epoch.
struct MetricsLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl TrainObserver for MetricsLog {
    fn on_epoch(&mut self, record: &EpochRecord, _params: &ParamStore) -> Result<()> {
        let line = serde_json::to_string(record).expect("epoch record serializes");
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| io_error(&self.path, e))
    }
}

fn report_json(split: &str, report: &MetricReport) -> serde_json::Value {
    json!({ "split": split, "metrics": report })
}

fn score(
    model: &Model,
    params: &ParamStore,
    stage: memrex::memory::MemoryStage,
    docs: &[Document],
    eval: &EvalConfig,
) -> Result<MetricReport> {
    let preds = predict_all(model, params, docs, stage)?;
    evaluate(&preds, docs, eval)
}

pub fn cmd_train(config_path: &Path) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let splits = load_splits(&config)?;
    let out_dir = output_dir(&config);
    create_dir(&out_dir)?;

    let tokens = TokenVocab::build(&splits.train, config.encoder.vocab_size);
    let model = config.build_model(splits.types.clone(), tokens)?;

    let log_path = out_dir.join(METRICS_LOG);
    let file = File::create(&log_path).map_err(|e| io_error(&log_path, e))?;
    let mut log = MetricsLog {
        path: log_path,
        out: BufWriter::new(file),
    };
    let outcome = train(
        &model,
        &splits.train,
        &splits.dev,
        &config.train,
        &config.eval,
        &mut log,
    )?;

    let best = outcome.log.iter().rev().find(|r| r.best);
    let step = best.map_or(outcome.total_steps, |r| r.step);
    let best_f1 = best.map_or(0.0, |r| r.selection.f1);
    let checkpoint_dir = out_dir.join(CHECKPOINT_DIR);
    save_checkpoint(
        &checkpoint_dir,
        &CheckpointState {
            config: &config,
            model: &model,
            params: &outcome.best_params,
            step,
            total_steps: outcome.total_steps,
            epoch: outcome.best_epoch,
            dev_f1: best_f1,
        },
    )?;

    let stage = memrex::training::inference_stage(step, outcome.total_steps, config.memory.warmup_proportion);
    let dev = score(&model, &outcome.best_params, stage, &splits.dev, &config.eval)?;
    write_json(&out_dir.join(DEV_REPORT), &report_json("dev", &dev))?;
    if !splits.test.is_empty() {
        let test = score(&model, &outcome.best_params, stage, &splits.test, &config.eval)?;
        write_json(&out_dir.join(TEST_REPORT), &report_json("test", &test))?;
    }
    println!(
        "trained {} epochs; best epoch {} ({} strict F1 {:.4}); dev strict F1 {:.4}; checkpoint {}",
        outcome.log.len(),
        outcome.best_epoch,
        best.map_or("train", |r| r.selection_split.as_str()),
        best_f1,
        dev.strict.f1,
        checkpoint_dir.display()
    );
    Ok(())
}

fn load_for_inference(checkpoint: &Path, data: &Path) -> Result<(LoadedCheckpoint, Vec<Document>)> {
    let loaded = load_checkpoint(checkpoint)?;
    let (docs, _) = load_docred(data, Some(loaded.model.types()))?;
    Ok((loaded, docs))
}

pub fn cmd_evaluate(
    checkpoint: &Path,
    data: &Path,
    split: &str,
    split_file: Option<&Path>,
    gold_passthrough: bool,
    out: Option<&Path>,
) -> Result<()> {
    let (loaded, docs) = load_for_inference(checkpoint, data)?;
    let docs = match split_file {
        Some(path) => {
            let parts = split_dataset(docs, &SplitSpec::File(SplitFile::load(path)?))?;
            parts
                .partition(split)
                .ok_or_else(|| Error::Split(format!("unknown split `{split}`; expected train, dev or test")))?
                .to_vec()
        }
        None => docs,
    };
    if let Some(d) = docs.iter().find(|d| !d.is_annotated()) {
        return Err(Error::Validation {
            doc_id: d.doc_id().to_string(),
            message: "evaluation requires gold annotations".into(),
        });
    }
    let preds = if gold_passthrough {
        docs.iter().map(DocumentPrediction::from_gold).collect()
    } else {
        predict_all(&loaded.model, &loaded.params, &docs, loaded.inference_stage())?
    };
    let report = evaluate(&preds, &docs, &loaded.config.eval)?;
    let path = match out {
        Some(p) => p.to_path_buf(),
        None => checkpoint
            .parent()
            .unwrap_or(Path::new("."))
            .join(format!("{split}_report.json")),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_json(&path, &report_json(split, &report))?;
    println!(
        "{split} strict F1 {:.4} ({} documents)",
        report.strict.f1, report.documents
    );
    Ok(())
}

/// Metrics path for a prediction file: `preds.json` becomes `preds.metrics.json`.
pub fn metrics_path(predictions: &Path) -> PathBuf {
    let stem = predictions
        .file_stem()
        .map_or_else(|| "predictions".into(), |s| s.to_string_lossy().into_owned());
    predictions.with_file_name(format!("{stem}.metrics.json"))
}

pub fn cmd_predict(checkpoint: &Path, data: &Path, out: &Path) -> Result<()> {
    let (loaded, docs) = load_for_inference(checkpoint, data)?;
    let preds = predict_all(&loaded.model, &loaded.params, &docs, loaded.inference_stage())?;
    let types = loaded.model.types();
    let values: Vec<serde_json::Value> = preds.iter().map(|p| p.to_json(types)).collect();
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_json(out, &serde_json::Value::Array(values))?;
    let annotated = !docs.is_empty() && docs.iter().all(Document::is_annotated);
    if annotated {
        let report = evaluate(&preds, &docs, &loaded.config.eval)?;
        write_json(&metrics_path(out), &report_json("predict", &report))?;
        println!("wrote {} predictions; strict F1 {:.4}", preds.len(), report.strict.f1);
    } else {
        println!("wrote {} predictions", preds.len());
    }
    Ok(())
}

pub fn cmd_convert_cdr(input: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(input).map_err(|e| io_error(input, e))?;
    let conv = convert_pubtator(&text)?;
    let raw = serde_json::to_string(&conv.documents).expect("converted documents serialize");
    let (docs, types) = memrex::corpus::parse_docred(&raw, None)?;
    write_docred(out, &docs, &types)?;
    println!(
        "converted {} documents ({} mentions and {} relations dropped)",
        docs.len(),
        conv.dropped_mentions,
        conv.dropped_relations
    );
    Ok(())
}
