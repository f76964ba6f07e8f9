//! Command-line front end: argument parsing, run configuration and the
//! commands themselves.
//!
//! A run is configured by an optional JSON file (`--config`) whose keys
//! mirror [`RunConfig`]; flags given on the command line override the file.
//! Every command writes the resolved configuration next to its outputs.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::backbone::{BackboneConfig, BackboneMode, EmbeddingCache};
use crate::corpus::{read_jsonl, write_jsonl, DocumentRecord};
use crate::error::{CwtmError, Result};
use crate::eval::{classify_probe, coherence_cv, diversity, make_planted_corpus, oov_split, MetricReport, PlantedConfig, ReferenceIndex, DEFAULT_FOLDS, DEFAULT_WINDOW};
use crate::model::{CwtmModel, Inference, TrainConfig};
use crate::topics::{read_stoplist, topics_from_json, topics_to_json, TopicAggregator, TopicEmbeddingAggregator, TopicFilter};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.json";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopicSettings {
    pub k: usize,
    pub min_count: usize,
    pub drop_most_frequent: usize,
    pub normalize_by_count: bool,
}

impl Default for TopicSettings {
    fn default() -> Self {
        let f = TopicFilter::default();
        TopicSettings {
            k: 10,
            min_count: f.min_count,
            drop_most_frequent: f.drop_most_frequent,
            normalize_by_count: f.normalize_by_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub window: usize,
    pub folds: usize,
    pub probe_seed: u64,
    pub train_size: usize,
    pub hi: f64,
    pub lo: f64,
    pub split_seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            window: DEFAULT_WINDOW,
            folds: DEFAULT_FOLDS,
            probe_seed: 0,
            train_size: 0,
            hi: 0.9,
            lo: 0.7,
            split_seed: 0,
        }
    }
}

/// Everything a command may read from a configuration file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub backbone: BackboneConfig,
    pub topics: TopicSettings,
    pub eval: EvalSettings,
    pub synthetic: PlantedConfig,
    pub corpus: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub stoplist: Option<PathBuf>,
    pub topics_file: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub deterministic: bool,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CwtmError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CwtmError::Config(format!("{}: {e}", path.display())))
    }

    pub fn filter(&self) -> Result<TopicFilter> {
        let stoplist = match &self.stoplist {
            Some(p) => read_stoplist(p)?,
            None => HashSet::new(),
        };
        Ok(TopicFilter {
            stoplist,
            min_count: self.topics.min_count,
            drop_most_frequent: self.topics.drop_most_frequent,
            normalize_by_count: self.topics.normalize_by_count,
        })
    }
}

#[derive(Debug, Parser)]
#[command(name = "cwtm", version, about = "Contextualized word topic model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes checkpoint, history and config snapshot to --out.
    Train(TrainArgs),
    /// Extract ranked topic words from a corpus.
    Topics(TopicsArgs),
    /// Per-document and per-word topic vectors as JSONL.
    Infer(InferArgs),
    /// Evaluation protocols.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Write a planted-topic corpus.
    MakeSynthetic(SyntheticArgs),
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// C_V coherence of a topics file against a reference corpus.
    Coherence(CoherenceArgs),
    /// Embedding-centroid diversity of a topics file.
    Diversity(DiversityArgs),
    /// Cross-validated logistic-regression probe on document-topic vectors.
    Classify(ClassifyArgs),
    /// Split a corpus into train, Test1 (mostly seen words) and Test2.
    OovSplit(OovSplitArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Toy,
    Cached,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Mi,
    Mlm,
    Rec,
    MmdTheta,
    MmdPhi,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Omit wall-clock fields so reruns are byte-identical.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelInput {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Contextual embedding cache for cached mode.
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub input: ModelInput,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub num_topics: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub warmup_fraction: Option<f64>,
    #[arg(long)]
    pub dirichlet_alpha: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long)]
    pub diagnostic_docs: Option<usize>,
    /// Fix every importance weight to 1.
    #[arg(long)]
    pub no_importance: bool,
    /// Switch off an objective term; repeatable.
    #[arg(long, value_enum)]
    pub disable_loss: Vec<LossArg>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub prompt_len: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub mask_rate: Option<f64>,
    /// Train the toy backbone's base weights too.
    #[arg(long)]
    pub train_base: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TopicsArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub input: ModelInput,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Expected number of topics; an error if the checkpoint differs.
    #[arg(long)]
    pub num_topics: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub stoplist: Option<PathBuf>,
    #[arg(long)]
    pub min_count: Option<usize>,
    #[arg(long)]
    pub drop_most_frequent: Option<usize>,
    #[arg(long)]
    pub normalize_by_count: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub input: ModelInput,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CoherenceArgs {
    #[command(flatten)]
    pub common: Common,
    /// Topics JSON as written by `topics`.
    #[arg(long)]
    pub topics: Option<PathBuf>,
    /// Reference corpus (JSONL).
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DiversityArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub input: ModelInput,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub topics: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub input: ModelInput,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub probe_seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct OovSplitArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub train_size: Option<usize>,
    #[arg(long)]
    pub hi: Option<f64>,
    #[arg(long)]
    pub lo: Option<f64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SyntheticArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub topics: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub docs_per_class: Option<usize>,
    #[arg(long)]
    pub doc_len: Option<usize>,
    #[arg(long)]
    pub concentration: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// 2 for usage, configuration and path problems, 3 for bad data, 4 for
/// numeric failure.
pub fn exit_code(err: &CwtmError) -> i32 {
    match err {
        CwtmError::Config(_) | CwtmError::InvalidPrior(_) | CwtmError::Io { .. } | CwtmError::UnsupportedMode { .. } => 2,
        CwtmError::Numeric(_) => 4,
        _ => 3,
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, value: &Option<PathBuf>) {
    if value.is_some() {
        slot.clone_from(value);
    }
}

fn base_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    set_path(&mut cfg.output, &common.out);
    cfg.deterministic |= common.deterministic;
    Ok(cfg)
}

fn require<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    let p = path.as_deref().ok_or_else(|| CwtmError::Config(format!("--{flag} is required")))?;
    if !p.exists() {
        return Err(CwtmError::Config(format!("{flag} path does not exist: {}", p.display())));
    }
    Ok(p)
}

fn output(cfg: &RunConfig) -> Result<&Path> {
    let p = cfg.output.as_deref().ok_or_else(|| CwtmError::Config("--out is required".into()))?;
    if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        if !parent.is_dir() {
            return Err(CwtmError::Config(format!("output directory does not exist: {}", parent.display())));
        }
    }
    Ok(p)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CwtmError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// `topics.json` → `topics.config.json`.
pub fn snapshot_path(out: &Path) -> PathBuf {
    out.with_extension("config.json")
}

fn load_cache(cfg: &RunConfig) -> Result<Option<EmbeddingCache>> {
    match &cfg.cache {
        Some(_) => Ok(Some(EmbeddingCache::read(require(&cfg.cache, "cache")?)?)),
        None => Ok(None),
    }
}

fn load_model(cfg: &RunConfig) -> Result<CwtmModel> {
    let ckpt = require(&cfg.checkpoint, "checkpoint")?;
    CwtmModel::load(ckpt, load_cache(cfg)?)
}

/// Inference over every non-empty document; empty ones are skipped with a
/// warning.
fn infer_all(model: &CwtmModel, docs: &[DocumentRecord]) -> Result<Vec<(usize, Inference)>> {
    let mut out = Vec::with_capacity(docs.len());
    for (i, d) in docs.iter().enumerate() {
        match model.infer_document(d) {
            Ok(inf) => out.push((i, inf)),
            Err(CwtmError::EmptyDocument(_)) => log::warn!("skipping empty document '{}'", d.id),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Topics(a) => cmd_topics(&a),
        Command::Infer(a) => cmd_infer(&a),
        Command::Eval(EvalCommand::Coherence(a)) => cmd_coherence(&a),
        Command::Eval(EvalCommand::Diversity(a)) => cmd_diversity(&a),
        Command::Eval(EvalCommand::Classify(a)) => cmd_classify(&a),
        Command::Eval(EvalCommand::OovSplit(a)) => cmd_oov_split(&a),
        Command::MakeSynthetic(a) => cmd_make_synthetic(&a),
    }
}

pub fn resolve_train(a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = base_config(&a.common)?;
    set_path(&mut cfg.corpus, &a.input.corpus);
    set_path(&mut cfg.cache, &a.input.cache);
    let t = &mut cfg.train;
    set(&mut t.seed, a.seed);
    set(&mut t.epochs, a.epochs);
    set(&mut t.num_topics, a.num_topics);
    set(&mut t.batch_size, a.batch_size);
    set(&mut t.learning_rate, a.learning_rate);
    set(&mut t.warmup_fraction, a.warmup_fraction);
    set(&mut t.dirichlet_alpha, a.dirichlet_alpha);
    set(&mut t.hidden, a.hidden);
    set(&mut t.diagnostic_docs, a.diagnostic_docs);
    if a.negatives.is_some() {
        t.negatives_per_doc = a.negatives;
    }
    if a.no_importance {
        t.importance_enabled = false;
    }
    for l in &a.disable_loss {
        let toggles = &mut t.loss_toggles;
        match l {
            LossArg::Mi => toggles.mi = false,
            LossArg::Mlm => toggles.mlm = false,
            LossArg::Rec => toggles.rec = false,
            LossArg::MmdTheta => toggles.mmd_theta = false,
            LossArg::MmdPhi => toggles.mmd_phi = false,
        }
    }
    let b = &mut cfg.backbone;
    set(
        &mut b.mode,
        a.mode.map(|m| match m {
            ModeArg::Toy => BackboneMode::Toy,
            ModeArg::Cached => BackboneMode::Cached,
        }),
    );
    set(&mut b.dim, a.dim);
    set(&mut b.layers, a.layers);
    set(&mut b.heads, a.heads);
    set(&mut b.prompt_len, a.prompt_len);
    set(&mut b.vocab_size, a.vocab_size);
    set(&mut b.mask_rate, a.mask_rate);
    if a.train_base {
        b.freeze_base = false;
    }
    Ok(cfg)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = resolve_train(a)?;
    cfg.train.validate()?;
    let corpus_path = require(&cfg.corpus, "corpus")?;
    if cfg.backbone.mode == BackboneMode::Cached && cfg.cache.is_none() {
        return Err(CwtmError::Config("cached mode needs --cache".into()));
    }
    let cache = load_cache(&cfg)?;
    let out = cfg.output.clone().ok_or_else(|| CwtmError::Config("--out is required".into()))?;
    fs::create_dir_all(&out).map_err(|e| CwtmError::io(&out, e))?;

    let docs = read_jsonl(corpus_path)?;
    let mut model = CwtmModel::new(cfg.train.clone(), cfg.backbone.clone(), &docs, cache)?;
    let mut cfg = cfg;
    cfg.backbone = model.backbone_config().clone();
    write_json(&out.join(CONFIG_FILE), &cfg)?;
    let history = model.train(&docs, cfg.deterministic)?;
    model.save(&out.join(CHECKPOINT_FILE))?;
    write_json(&out.join(HISTORY_FILE), &history)?;
    if let Some(last) = history.epochs.last() {
        log::info!("final diagnostic MMD {:.6}", last.diagnostic_mmd);
    }
    Ok(())
}

pub fn resolve_topics(a: &TopicsArgs) -> Result<RunConfig> {
    let mut cfg = base_config(&a.common)?;
    set_path(&mut cfg.corpus, &a.input.corpus);
    set_path(&mut cfg.cache, &a.input.cache);
    set_path(&mut cfg.checkpoint, &a.checkpoint);
    set_path(&mut cfg.stoplist, &a.stoplist);
    set(&mut cfg.topics.k, a.k);
    set(&mut cfg.topics.min_count, a.min_count);
    set(&mut cfg.topics.drop_most_frequent, a.drop_most_frequent);
    cfg.topics.normalize_by_count |= a.normalize_by_count;
    Ok(cfg)
}

fn cmd_topics(a: &TopicsArgs) -> Result<()> {
    let mut cfg = resolve_topics(a)?;
    let corpus_path = require(&cfg.corpus, "corpus")?.to_path_buf();
    let out = output(&cfg)?.to_path_buf();
    let filter = cfg.filter()?;
    let model = load_model(&cfg)?;
    if let Some(z) = a.num_topics.filter(|&z| z != model.num_topics()) {
        return Err(CwtmError::Config(format!("requested {z} topics but the checkpoint has {}", model.num_topics())));
    }
    cfg.train = model.config().clone();
    cfg.backbone = model.backbone_config().clone();
    write_json(&snapshot_path(&out), &cfg)?;

    let docs = read_jsonl(&corpus_path)?;
    let mut agg = TopicAggregator::new(model.num_topics());
    for (_, inf) in infer_all(&model, &docs)? {
        agg.add_inference(&inf)?;
    }
    let topics = agg.finish()?.all_topics(cfg.topics.k, &filter)?;
    let mut text = topics_to_json(&topics)?;
    text.push('\n');
    write_text(&out, &text)
}

#[derive(Serialize)]
struct WordRecord<'a> {
    word: &'a str,
    position: usize,
    theta: &'a [f64],
    alpha: f64,
}

fn cmd_infer(a: &InferArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    set_path(&mut cfg.corpus, &a.input.corpus);
    set_path(&mut cfg.cache, &a.input.cache);
    set_path(&mut cfg.checkpoint, &a.checkpoint);
    let corpus_path = require(&cfg.corpus, "corpus")?.to_path_buf();
    let out = output(&cfg)?.to_path_buf();
    let model = load_model(&cfg)?;
    cfg.train = model.config().clone();
    cfg.backbone = model.backbone_config().clone();
    write_json(&snapshot_path(&out), &cfg)?;

    let docs = read_jsonl(&corpus_path)?;
    let file = File::create(&out).map_err(|e| CwtmError::io(&out, e))?;
    let mut w = BufWriter::new(file);
    let mut failures = 0;
    for d in &docs {
        let line = match model.infer_document(d) {
            Ok(inf) => {
                let words: Vec<WordRecord> = inf
                    .words
                    .iter()
                    .zip(&inf.weights.alpha)
                    .map(|(wv, &alpha)| WordRecord {
                        word: &wv.word,
                        position: wv.position,
                        theta: wv.theta.as_slice(),
                        alpha,
                    })
                    .collect();
                json!({"doc_id": d.id, "theta_d": inf.document.theta_d.as_slice(), "words": words})
            }
            Err(e @ (CwtmError::EmptyDocument(_) | CwtmError::CacheMiss(_))) => {
                failures += 1;
                log::warn!("{e}");
                json!({"doc_id": d.id, "error": e.to_string()})
            }
            Err(e) => return Err(e),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(|e| CwtmError::io(&out, e))?;
    }
    w.flush().map_err(|e| CwtmError::io(&out, e))?;
    if failures > 0 {
        log::warn!("{failures} of {} documents produced error records", docs.len());
    }
    Ok(())
}

fn report(out: &Path, metric: &str, value: f64, config: serde_json::Value, breakdown: serde_json::Value) -> Result<()> {
    write_json(
        out,
        &MetricReport {
            metric: metric.into(),
            value,
            config,
            breakdown,
        },
    )
}

fn read_topics(path: &Path) -> Result<Vec<crate::topics::Topic>> {
    let text = fs::read_to_string(path).map_err(|e| CwtmError::io(path, e))?;
    topics_from_json(&text)
}

fn cmd_coherence(a: &CoherenceArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    set_path(&mut cfg.topics_file, &a.topics);
    set_path(&mut cfg.reference, &a.reference);
    set(&mut cfg.eval.window, a.window);
    let topics_path = require(&cfg.topics_file, "topics")?.to_path_buf();
    let reference = require(&cfg.reference, "reference")?.to_path_buf();
    let out = output(&cfg)?.to_path_buf();
    write_json(&snapshot_path(&out), &cfg)?;

    let topics = read_topics(&topics_path)?;
    let index = ReferenceIndex::build(&read_jsonl(&reference)?, cfg.eval.window)?;
    let mut per_topic = Vec::with_capacity(topics.len());
    for t in &topics {
        let c = coherence_cv(&t.words(), &index)?;
        per_topic.push(json!({"topic": t.index, "value": c.value, "per_word": c.per_word, "missing": c.missing}));
    }
    let values: Vec<f64> = per_topic.iter().map(|v| v["value"].as_f64().expect("number")).collect();
    let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
    report(&out, "coherence_cv", mean, json!({"window": cfg.eval.window, "reference": reference}), json!(per_topic))
}

fn cmd_diversity(a: &DiversityArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    set_path(&mut cfg.corpus, &a.input.corpus);
    set_path(&mut cfg.cache, &a.input.cache);
    set_path(&mut cfg.checkpoint, &a.checkpoint);
    set_path(&mut cfg.topics_file, &a.topics);
    let corpus_path = require(&cfg.corpus, "corpus")?.to_path_buf();
    let topics_path = require(&cfg.topics_file, "topics")?.to_path_buf();
    let out = output(&cfg)?.to_path_buf();
    let model = load_model(&cfg)?;
    write_json(&snapshot_path(&out), &cfg)?;

    let topics = read_topics(&topics_path)?;
    if let Some(t) = topics.iter().find(|t| t.index >= model.num_topics()) {
        return Err(CwtmError::Config(format!("topic {} is out of range for a {}-topic model", t.index, model.num_topics())));
    }
    let mut agg = TopicEmbeddingAggregator::new(&topics);
    for (_, inf) in infer_all(&model, &read_jsonl(&corpus_path)?)? {
        agg.add_inference(&inf);
    }
    let emb = agg.finish();
    let d = diversity(&topics, |z, w| emb.get(z, w))?;
    report(&out, "diversity", d.value, json!({"centroid_words": crate::eval::diversity::CENTROID_WORDS}), json!({"similarity": d.similarity, "pairs": d.pairs}))
}

fn cmd_classify(a: &ClassifyArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    set_path(&mut cfg.corpus, &a.input.corpus);
    set_path(&mut cfg.cache, &a.input.cache);
    set_path(&mut cfg.checkpoint, &a.checkpoint);
    set(&mut cfg.eval.folds, a.folds);
    set(&mut cfg.eval.probe_seed, a.probe_seed);
    let corpus_path = require(&cfg.corpus, "corpus")?.to_path_buf();
    let out = output(&cfg)?.to_path_buf();
    let model = load_model(&cfg)?;
    write_json(&snapshot_path(&out), &cfg)?;

    let docs = read_jsonl(&corpus_path)?;
    if let Some(d) = docs.iter().find(|d| d.label.is_none()) {
        return Err(CwtmError::Eval(format!("document '{}' has no label", d.id)));
    }
    let infs = infer_all(&model, &docs)?;
    let vectors: Vec<Vec<f64>> = infs.iter().map(|(_, inf)| inf.document.theta_d.as_slice().to_vec()).collect();
    let labels: Vec<String> = infs.iter().map(|(i, _)| docs[*i].label.clone().expect("checked")).collect();
    let r = classify_probe(&vectors, &labels, cfg.eval.folds, cfg.eval.probe_seed)?;
    report(
        &out,
        "classification_accuracy",
        r.accuracy,
        json!({"folds": r.folds, "l2_penalty": r.l2_penalty, "iterations": r.iterations, "seed": cfg.eval.probe_seed}),
        serde_json::to_value(&r)?,
    )
}

fn cmd_oov_split(a: &OovSplitArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    set_path(&mut cfg.corpus, &a.corpus);
    set(&mut cfg.eval.train_size, a.train_size);
    set(&mut cfg.eval.hi, a.hi);
    set(&mut cfg.eval.lo, a.lo);
    set(&mut cfg.eval.split_seed, a.split_seed);
    let corpus_path = require(&cfg.corpus, "corpus")?.to_path_buf();
    let out = cfg.output.clone().ok_or_else(|| CwtmError::Config("--out is required".into()))?;
    let e = &cfg.eval;
    let docs = read_jsonl(&corpus_path)?;
    let split = oov_split(&docs, e.train_size, e.hi, e.lo, e.split_seed)?;
    fs::create_dir_all(&out).map_err(|err| CwtmError::io(&out, err))?;
    write_json(&out.join(CONFIG_FILE), &cfg)?;
    let pick = |ids: &[String]| -> Vec<DocumentRecord> {
        let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
        docs.iter().filter(|d| wanted.contains(d.id.as_str())).cloned().collect()
    };
    write_jsonl(&out.join("train.jsonl"), &pick(&split.train))?;
    write_jsonl(&out.join("test1.jsonl"), &pick(&split.test1))?;
    write_jsonl(&out.join("test2.jsonl"), &pick(&split.test2))?;
    write_json(&out.join("split.json"), &split)
}

fn cmd_make_synthetic(a: &SyntheticArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    let s = &mut cfg.synthetic;
    set(&mut s.topics, a.topics);
    set(&mut s.vocab_size, a.vocab_size);
    set(&mut s.docs_per_class, a.docs_per_class);
    set(&mut s.doc_len, a.doc_len);
    set(&mut s.concentration, a.concentration);
    set(&mut s.seed, a.seed);
    let out = output(&cfg)?.to_path_buf();
    let planted = make_planted_corpus(&cfg.synthetic)?;
    write_json(&snapshot_path(&out), &cfg)?;
    write_jsonl(&out, &planted.documents)?;
    let truth: Vec<serde_json::Value> = (0..cfg.synthetic.topics)
        .map(|t| json!({"topic": t, "label": crate::eval::planted::class_label(t), "top_words": planted.top_words(t, 20)}))
        .collect();
    write_json(&out.with_extension("truth.json"), &truth)
}
