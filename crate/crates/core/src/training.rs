//! Optimisation loop, checkpoints, and the experiment drivers built on it
//! (ablation and coefficient sweeps).
//!
//! One trainer thread owns the parameters and the tape. Subgraph extraction
//! runs ahead of it on a worker pool (sized by `MCCL_NUM_WORKERS`) and hands
//! finished batches over a bounded channel. Batch contents and order depend
//! only on the seed, so the worker count never changes results.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::mpsc::sync_channel;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::dataset::{DatasetError, RatingDataset, RatingScale, SplitDataset};
use crate::fusion::{ContrastiveDenominator, LossBreakdown, LossWeights};
use crate::graph::{batch, build_graph, extract_subgraph_with, BipartiteGraph, ExtractOptions, GraphError, SubgraphBatch};
use crate::layers::MessageIndex;
use crate::metrics::{self, EvalOptions, MetricReport, MetricsError};
use crate::model::{predict_pairs, AblationMode, Mccl, ModelError, ModelShape};
use crate::numeric::{NumericError, ParamStore, Tape, Tensor};
use crate::vgae::Noise;

pub const NUM_WORKERS_ENV: &str = "MCCL_NUM_WORKERS";

/// Batches prepared ahead of the trainer.
const PREFETCH: usize = 2;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("InvalidConfig: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("Io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    pub embedding_dim: usize,
    pub vgae_layers: usize,
    /// Total relational layers of the denoising view, the first of which
    /// carries no attention.
    pub denoise_layers: usize,
    pub loss_weights: LossWeights,
    pub scale: RatingScale,
    pub ablation_mode: AblationMode,
    pub contrastive_denominator: ContrastiveDenominator,
    /// Optional cap on each target's neighbor list during extraction.
    pub max_neighbors: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            learning_rate: 0.001,
            weight_decay: 0.09,
            epochs: 40,
            seed: 0,
            embedding_dim: 64,
            vgae_layers: 3,
            denoise_layers: 4,
            loss_weights: LossWeights::default(),
            scale: RatingScale::default(),
            ablation_mode: AblationMode::Full,
            contrastive_denominator: ContrastiveDenominator::All,
            max_neighbors: None,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let cfg: TrainConfig = serde_json::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    // Negated comparisons so that NaN is rejected.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.batch_size == 0 || self.embedding_dim == 0 || self.vgae_layers == 0 || self.denoise_layers == 0 {
            return bad("batch_size, embedding_dim and layer counts must be positive".into());
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("learning_rate must be positive and weight_decay non-negative".into());
        }
        let w = &self.loss_weights;
        if !(w.alpha >= 0.0 && w.beta >= 0.0 && w.lambda >= 0.0) || !(w.tau > 0.0) {
            return bad("loss weights must be non-negative and tau positive".into());
        }
        if self.ablation_mode == AblationMode::Full && self.batch_size < 2 {
            return bad("batch_size must be at least 2 when the contrastive loss is active".into());
        }
        if self.max_neighbors == Some(0) {
            return bad("max_neighbors must be positive".into());
        }
        Ok(())
    }

    /// Applies one `dotted.key=value` override. The value is parsed as JSON
    /// and falls back to a plain string. `loss.` is accepted as shorthand
    /// for `loss_weights.`.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), TrainError> {
        let (key, raw) = spec
            .split_once('=')
            .ok_or_else(|| TrainError::Config(format!("override `{spec}` is not of the form key=value")))?;
        let key = key.trim();
        let path: Vec<&str> = key.split('.').collect();
        let path: Vec<&str> = match path.first() {
            Some(&"loss") => std::iter::once("loss_weights").chain(path[1..].iter().copied()).collect(),
            _ => path,
        };
        let value: Value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
        let mut doc = serde_json::to_value(&*self).expect("config serialises");
        let mut slot = &mut doc;
        for part in &path {
            slot = slot
                .as_object_mut()
                .and_then(|m| m.get_mut(*part))
                .ok_or_else(|| TrainError::Config(format!("unknown config key `{key}`")))?;
        }
        *slot = value;
        let cfg: TrainConfig =
            serde_json::from_value(doc).map_err(|e| TrainError::Config(format!("override `{spec}`: {e}")))?;
        cfg.validate()?;
        *self = cfg;
        Ok(())
    }

    pub fn model_shape(&self) -> ModelShape {
        ModelShape {
            embedding_dim: self.embedding_dim,
            denoise_layers: self.denoise_layers,
            vgae_layers: self.vgae_layers,
            scale: self.scale,
            contrastive_denominator: self.contrastive_denominator,
        }
    }

    pub fn extract_options(&self) -> ExtractOptions {
        ExtractOptions { hops: 1, max_neighbors: self.max_neighbors, seed: self.seed }
    }
}

/// Adaptive-moment optimiser with decoupled weight decay:
/// `p ← p − lr·wd·p − lr·m̂/(√v̂ + ε)`, decay only where the parameter is
/// marked for it.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        AdamW { learning_rate, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, moments: BTreeMap::new() }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Parameters missing from `grads` are treated as having zero gradient.
    pub fn update(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let lr = self.learning_rate;
        for (name, p) in params.iter_mut() {
            let n = p.value.len();
            let (m, v) = self.moments.entry(name.to_string()).or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let g = grads.get(name).map(|t| t.data());
            let decay = if p.decay { lr * self.weight_decay } else { 0.0 };
            for (k, x) in p.value.data_mut().iter_mut().enumerate() {
                let gk = g.map_or(0.0, |g| g[k]);
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let step = (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
                *x -= decay * *x + lr * step;
            }
        }
    }
}

/// A batch with its message-passing index, ready for the trainer.
#[derive(Clone, Debug)]
pub struct PreparedBatch {
    pub batch: SubgraphBatch,
    pub index: MessageIndex,
}

impl PreparedBatch {
    pub fn new(batch: SubgraphBatch, relations: usize) -> Self {
        let index = MessageIndex::new(&batch, relations);
        PreparedBatch { batch, index }
    }

    /// Extracts the subgraphs of `pairs` from `graph`. Targets that are
    /// edges of `graph` carry their rating.
    pub fn extract(
        graph: &BipartiteGraph,
        pairs: &[(usize, usize)],
        opts: &ExtractOptions,
        relations: usize,
    ) -> Result<Self, GraphError> {
        let subgraphs = pairs
            .iter()
            .map(|&(u, i)| extract_subgraph_with(graph, u, i, opts))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PreparedBatch::new(batch(&subgraphs)?, relations))
    }
}

/// Attention statistics of one layer for one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionSummary {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub raw_min: f64,
    pub raw_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub mode: AblationMode,
    pub epoch: usize,
    pub step: usize,
    pub batch_size: usize,
    #[serde(flatten)]
    pub losses: LossBreakdown,
    pub attention_calls: usize,
    pub attention: Vec<AttentionSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub mode: AblationMode,
    pub epoch: usize,
    pub steps: usize,
    /// Mean of the per-step total loss.
    pub train_loss: f64,
    /// Per-step means of every loss component.
    #[serde(flatten)]
    pub losses: LossBreakdown,
    pub val_rmse: f64,
    pub best_val_rmse: f64,
}

/// Receives progress while training runs.
pub trait TrainObserver {
    fn on_start(&mut self, _cfg: &TrainConfig) -> Result<(), TrainError> {
        Ok(())
    }
    fn on_step(&mut self, _record: &StepRecord) -> Result<(), TrainError> {
        Ok(())
    }
    fn on_epoch(&mut self, _record: &EpochRecord) -> Result<(), TrainError> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Collects every record in memory.
#[derive(Clone, Debug, Default)]
pub struct RecordingObserver {
    pub configs: Vec<TrainConfig>,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainObserver for RecordingObserver {
    fn on_start(&mut self, cfg: &TrainConfig) -> Result<(), TrainError> {
        self.configs.push(cfg.clone());
        Ok(())
    }
    fn on_step(&mut self, record: &StepRecord) -> Result<(), TrainError> {
        self.steps.push(record.clone());
        Ok(())
    }
    fn on_epoch(&mut self, record: &EpochRecord) -> Result<(), TrainError> {
        self.epochs.push(record.clone());
        Ok(())
    }
}

/// Writes one JSON object per line: a `config` record when a run starts,
/// then `step` and `epoch` records.
pub struct JsonLinesLog<W: Write> {
    out: W,
}

impl<W: Write> JsonLinesLog<W> {
    pub fn new(out: W) -> Self {
        JsonLinesLog { out }
    }

    pub fn into_inner(self) -> W {
        self.out
    }

    fn write(&mut self, kind: &str, body: Value) -> Result<(), TrainError> {
        let mut obj = json!({ "kind": kind });
        if let (Some(o), Value::Object(b)) = (obj.as_object_mut(), body) {
            o.extend(b);
        }
        writeln!(self.out, "{obj}")?;
        Ok(())
    }
}

impl<W: Write> TrainObserver for JsonLinesLog<W> {
    fn on_start(&mut self, cfg: &TrainConfig) -> Result<(), TrainError> {
        self.write("config", json!({ "config": cfg }))
    }
    fn on_step(&mut self, record: &StepRecord) -> Result<(), TrainError> {
        self.write("step", serde_json::to_value(record).expect("record serialises"))
    }
    fn on_epoch(&mut self, record: &EpochRecord) -> Result<(), TrainError> {
        self.out.flush()?;
        self.write("epoch", serde_json::to_value(record).expect("record serialises"))
    }
}

/// Owns the model, optimiser and noise stream.
pub struct Trainer {
    pub model: Mccl,
    pub optimizer: AdamW,
    pub cfg: TrainConfig,
    noise: ChaCha8Rng,
    steps: usize,
}

const NOISE_SALT: u64 = 0x6E6F_6973_655F_7267;
const SHUFFLE_SALT: u64 = 0x7368_7566_666C_6531;

impl Trainer {
    pub fn new(cfg: &TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        Ok(Trainer {
            model: Mccl::init(cfg.model_shape(), cfg.seed),
            optimizer: AdamW::new(cfg.learning_rate, cfg.weight_decay),
            cfg: cfg.clone(),
            noise: ChaCha8Rng::seed_from_u64(cfg.seed ^ NOISE_SALT),
            steps: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn noise_state(&self) -> RngState {
        RngState { seed: self.cfg.seed ^ NOISE_SALT, word_pos: self.noise.get_word_pos().to_string() }
    }

    /// One forward/backward pass and parameter update on `prepared`.
    pub fn step(&mut self, prepared: &PreparedBatch, epoch: usize) -> Result<StepRecord, TrainError> {
        let mut tape = Tape::new();
        let bound = self.model.params.bind(&mut tape);
        let out = self.model.step(
            &mut tape,
            &bound,
            &prepared.batch,
            &prepared.index,
            self.cfg.ablation_mode,
            &self.cfg.loss_weights,
            Noise::Sample(&mut self.noise),
        )?;
        tape.backward(out.loss)?;
        let grads: BTreeMap<String, Tensor> = bound
            .iter()
            .filter_map(|(name, v)| tape.grad(v).map(|g| (name.to_string(), g.clone())))
            .collect();
        let attention = match &out.forward.view1 {
            Some(v1) => v1
                .scores
                .iter()
                .zip(&v1.attention)
                .map(|(&s, &a)| {
                    let (raw_min, raw_max) = extent(tape.value(s).data());
                    let (alpha_min, alpha_max) = extent(tape.value(a).data());
                    AttentionSummary { alpha_min, alpha_max, raw_min, raw_max }
                })
                .collect(),
            None => Vec::new(),
        };
        self.optimizer.update(&mut self.model.params, &grads);
        self.steps += 1;
        Ok(StepRecord {
            mode: self.cfg.ablation_mode,
            epoch,
            step: self.steps,
            batch_size: prepared.batch.len(),
            losses: out.breakdown,
            attention_calls: out.forward.attention_calls,
            attention,
        })
    }
}

fn extent(xs: &[f64]) -> (f64, f64) {
    xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Position of the noise stream, recorded so a run can be resumed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    /// ChaCha word position, as a decimal string (it is a 128-bit value).
    pub word_pos: String,
}

/// Best-validation parameters plus everything needed to rebuild the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Mccl,
    pub config: TrainConfig,
    pub best_val_rmse: f64,
    pub best_epoch: usize,
    pub rng: RngState,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    config: TrainConfig,
    best_val_rmse: f64,
    best_epoch: usize,
    rng: RngState,
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<(), TrainError> {
        let meta = CheckpointMeta {
            config: self.config.clone(),
            best_val_rmse: self.best_val_rmse,
            best_epoch: self.best_epoch,
            rng: self.rng.clone(),
        };
        self.model.params.save(dir, serde_json::to_value(meta).expect("metadata serialises"))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, TrainError> {
        let (params, meta) = ParamStore::load(dir)?;
        let meta: CheckpointMeta = serde_json::from_value(meta)
            .map_err(|e| NumericError::MalformedCheckpoint(format!("metadata: {e}")))?;
        let shape = meta.config.model_shape();
        let expected = Mccl::init(shape, 0).params;
        let layout = |s: &ParamStore| s.iter().map(|(n, p)| (n.to_string(), p.value.shape().to_vec())).collect::<Vec<_>>();
        if layout(&expected) != layout(&params) {
            return Err(NumericError::MalformedCheckpoint("parameters do not match the configured model".into()).into());
        }
        Ok(Checkpoint {
            model: Mccl { shape, params },
            config: meta.config,
            best_val_rmse: meta.best_val_rmse,
            best_epoch: meta.best_epoch,
            rng: meta.rng,
        })
    }
}

/// Worker count from `MCCL_NUM_WORKERS`, defaulting to the available
/// parallelism.
pub fn num_workers() -> Result<usize, TrainError> {
    match std::env::var(NUM_WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(TrainError::Config(format!("{NUM_WORKERS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

pub fn worker_pool() -> Result<ThreadPool, TrainError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(num_workers()?)
        .thread_name(|i| format!("mccl-extract-{i}"))
        .build()
        .map_err(|e| TrainError::Config(format!("worker pool: {e}")))
}

fn pairs_of(data: &RatingDataset) -> Vec<(usize, usize)> {
    data.interactions().iter().map(|x| (x.user, x.item)).collect()
}

fn ratings_of(data: &RatingDataset) -> Vec<f64> {
    data.interactions().iter().map(|x| x.rating).collect()
}

/// RMSE of `model` on `data`, each pair scored on its subgraph in `graph`.
pub fn rmse_on(
    model: &Mccl,
    graph: &BipartiteGraph,
    data: &RatingDataset,
    mode: AblationMode,
    opts: &ExtractOptions,
    batch_size: usize,
) -> Result<f64, TrainError> {
    let preds = predict_pairs(model, graph, &pairs_of(data), mode, opts, batch_size)?;
    Ok(metrics::rmse(&preds, &ratings_of(data))?)
}

/// Splits a shuffled order into batches; a trailing batch of one is merged
/// into its predecessor so the contrastive loss always has negatives.
pub fn batch_ranges(n: usize, batch_size: usize) -> Vec<std::ops::Range<usize>> {
    let mut ranges: Vec<_> = (0..n).step_by(batch_size).map(|s| s..(s + batch_size).min(n)).collect();
    if ranges.len() >= 2 && ranges.last().is_some_and(|r| r.len() == 1) {
        let last = ranges.pop().expect("non-empty");
        ranges.last_mut().expect("non-empty").end = last.end;
    }
    ranges
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub epochs: Vec<EpochRecord>,
}

/// Trains on `split.train`, selecting the parameters with the lowest
/// validation RMSE. With zero epochs the initial parameters are returned.
pub fn train(split: &SplitDataset, cfg: &TrainConfig, observer: &mut dyn TrainObserver) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if split.scale() != cfg.scale {
        return Err(TrainError::Config(format!(
            "dataset scale {} differs from configured scale {}",
            split.scale(),
            cfg.scale
        )));
    }
    if split.train.is_empty() || split.validation.is_empty() {
        return Err(DatasetError::EmptyDataset("training and validation parts must be non-empty".into()).into());
    }
    observer.on_start(cfg)?;
    let pool = worker_pool()?;
    let graph = build_graph(&split.train);
    let opts = cfg.extract_options();
    let relations = cfg.scale.levels();
    let mode = cfg.ablation_mode;
    let mut trainer = Trainer::new(cfg)?;
    let val_rmse =
        |model: &Mccl| pool.install(|| rmse_on(model, &graph, &split.validation, mode, &opts, cfg.batch_size));

    let mut best = Checkpoint {
        model: trainer.model.clone(),
        config: cfg.clone(),
        best_val_rmse: val_rmse(&trainer.model)?,
        best_epoch: 0,
        rng: trainer.noise_state(),
    };
    let train_pairs = pairs_of(&split.train);
    let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_SALT);
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let mut order = train_pairs.clone();
        order.shuffle(&mut shuffle);
        let ranges = batch_ranges(order.len(), cfg.batch_size);
        let mut sum = LossBreakdown::default();
        let mut steps = 0;
        std::thread::scope(|scope| -> Result<(), TrainError> {
            let (tx, rx) = sync_channel::<Result<PreparedBatch, GraphError>>(PREFETCH);
            let (order, ranges, graph, opts, pool) = (&order, &ranges, &graph, &opts, &pool);
            scope.spawn(move || {
                for r in ranges {
                    let prepared = pool.install(|| {
                        let subgraphs = order[r.clone()]
                            .par_iter()
                            .map(|&(u, i)| extract_subgraph_with(graph, u, i, opts))
                            .collect::<Result<Vec<_>, _>>()?;
                        Ok(PreparedBatch::new(batch(&subgraphs)?, relations))
                    });
                    if tx.send(prepared).is_err() {
                        break;
                    }
                }
            });
            for prepared in rx {
                let record = trainer.step(&prepared?, epoch)?;
                accumulate(&mut sum, &record.losses);
                steps += 1;
                observer.on_step(&record)?;
            }
            Ok(())
        })?;
        let val = val_rmse(&trainer.model)?;
        if val < best.best_val_rmse {
            best = Checkpoint {
                model: trainer.model.clone(),
                config: cfg.clone(),
                best_val_rmse: val,
                best_epoch: epoch,
                rng: trainer.noise_state(),
            };
        }
        let losses = scaled(&sum, 1.0 / steps.max(1) as f64);
        let record = EpochRecord {
            mode,
            epoch,
            steps,
            train_loss: losses.total,
            losses,
            val_rmse: val,
            best_val_rmse: best.best_val_rmse,
        };
        observer.on_epoch(&record)?;
        epochs.push(record);
    }
    Ok(TrainOutcome { checkpoint: best, epochs })
}

fn accumulate(acc: &mut LossBreakdown, x: &LossBreakdown) {
    acc.view1 += x.view1;
    acc.pred += x.pred;
    acc.rec += x.rec;
    acc.kl += x.kl;
    acc.view2 += x.view2;
    acc.contrastive += x.contrastive;
    acc.final_pred += x.final_pred;
    acc.total += x.total;
}

fn scaled(x: &LossBreakdown, f: f64) -> LossBreakdown {
    LossBreakdown {
        view1: x.view1 * f,
        pred: x.pred * f,
        rec: x.rec * f,
        kl: x.kl * f,
        view2: x.view2 * f,
        contrastive: x.contrastive * f,
        final_pred: x.final_pred * f,
        total: x.total * f,
    }
}

/// Full metric report of a checkpoint on `split.test`.
///
/// Test pairs and ranking candidates are scored on subgraphs of the
/// training graph; negatives are drawn from items the user has no
/// interaction with in any part of the split.
pub fn evaluate(checkpoint: &Checkpoint, split: &SplitDataset, eval: &EvalOptions) -> Result<MetricReport, TrainError> {
    let cfg = &checkpoint.config;
    let pool = worker_pool()?;
    let graph = build_graph(&split.train);
    let opts = cfg.extract_options();
    let mode = cfg.ablation_mode;
    let score = |pairs: &[(usize, usize)]| -> Result<Vec<f64>, TrainError> {
        Ok(pool.install(|| predict_pairs(&checkpoint.model, &graph, pairs, mode, &opts, cfg.batch_size))?)
    };
    let preds = score(&pairs_of(&split.test))?;
    let rmse = metrics::rmse(&preds, &ratings_of(&split.test))?;
    let per_user = metrics::group_by_user(&split.test, &preds);
    let ndcg = metrics::ndcg_rating(&per_user, eval.cutoff)?;
    let mrr = metrics::mrr_rating(&per_user, eval.cutoff, eval.relevance_threshold)?;
    let everything = build_graph(&split.combined());
    let ranking = metrics::ranking_protocol(&everything, &split.test, eval.cutoff, eval.negatives, eval.seed, score)?;
    Ok(MetricReport {
        rmse,
        ndcg_rating: ndcg.value,
        mrr_rating: mrr.value,
        ndcg_ranking: ranking.ndcg,
        mrr_ranking: ranking.mrr,
        cutoff: eval.cutoff,
        negatives: eval.negatives,
        users_evaluated: ranking.users_evaluated,
        users_skipped: ndcg.users_skipped,
    })
}

/// Test RMSE of a checkpoint, without the ranking metrics.
pub fn test_rmse(checkpoint: &Checkpoint, split: &SplitDataset) -> Result<f64, TrainError> {
    let cfg = &checkpoint.config;
    let pool = worker_pool()?;
    let graph = build_graph(&split.train);
    pool.install(|| {
        rmse_on(&checkpoint.model, &graph, &split.test, cfg.ablation_mode, &cfg.extract_options(), cfg.batch_size)
    })
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub checkpoint: Checkpoint,
    pub epochs: Vec<EpochRecord>,
    pub report: MetricReport,
}

/// Trains and evaluates once per ablation mode (vgae-only, denoise-only,
/// full), all with the seed of `cfg`.
pub fn ablate(
    split: &SplitDataset,
    cfg: &TrainConfig,
    eval: &EvalOptions,
    observer: &mut dyn TrainObserver,
) -> Result<Vec<RunResult>, TrainError> {
    AblationMode::ALL
        .iter()
        .map(|&mode| {
            let cfg = TrainConfig { ablation_mode: mode, ..cfg.clone() };
            let out = train(split, &cfg, observer)?;
            let report = evaluate(&out.checkpoint, split, eval)?;
            Ok(RunResult { checkpoint: out.checkpoint, epochs: out.epochs, report })
        })
        .collect()
}

/// Markdown-free comparison table: one CSV row per ablation mode.
pub fn ablation_table(runs: &[RunResult]) -> String {
    let mut s = format!("mode,{},best_val_rmse\n", MetricReport::CSV_HEADER);
    for r in runs {
        s += &format!("{},{},{}\n", r.checkpoint.config.ablation_mode.name(), r.report.csv_row(), r.checkpoint.best_val_rmse);
    }
    s
}

/// Loss coefficient varied by a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Alpha,
    Beta,
    Lambda,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::Beta => "beta",
            SweepParam::Lambda => "lambda",
        }
    }

    pub fn set(self, w: &mut LossWeights, value: f64) {
        match self {
            SweepParam::Alpha => w.alpha = value,
            SweepParam::Beta => w.beta = value,
            SweepParam::Lambda => w.lambda = value,
        }
    }
}

impl FromStr for SweepParam {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "alpha" => Ok(SweepParam::Alpha),
            "beta" => Ok(SweepParam::Beta),
            "lambda" => Ok(SweepParam::Lambda),
            _ => Err(TrainError::Config(format!("unknown sweep parameter `{s}` (alpha, beta, lambda)"))),
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Named value grids.
pub const SWEEP_PRESETS: &[(&str, SweepParam, &[f64])] = &[
    ("alpha-setup", SweepParam::Alpha, &[0.001, 0.005, 0.01]),
    ("alpha", SweepParam::Alpha, &[0.01, 0.0045, 0.001]),
    ("beta", SweepParam::Beta, &[0.01, 0.0045, 0.001, 0.0001]),
    ("lambda", SweepParam::Lambda, &[0.003, 0.002, 0.001, 0.0001]),
];

pub fn sweep_preset(name: &str) -> Option<(SweepParam, &'static [f64])> {
    SWEEP_PRESETS.iter().find(|(n, _, _)| *n == name).map(|&(_, p, v)| (p, v))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub best_val_rmse: f64,
    pub report: MetricReport,
}

/// One train and evaluate per value, all with the seed of `cfg`.
pub fn sweep(
    split: &SplitDataset,
    cfg: &TrainConfig,
    param: SweepParam,
    values: &[f64],
    eval: &EvalOptions,
    observer: &mut dyn TrainObserver,
) -> Result<Vec<SweepRow>, TrainError> {
    if values.is_empty() {
        return Err(TrainError::Config("sweep needs at least one value".into()));
    }
    values
        .iter()
        .map(|&value| {
            let mut cfg = cfg.clone();
            param.set(&mut cfg.loss_weights, value);
            cfg.validate()?;
            let out = train(split, &cfg, observer)?;
            let report = evaluate(&out.checkpoint, split, eval)?;
            Ok(SweepRow { value, best_val_rmse: out.checkpoint.best_val_rmse, report })
        })
        .collect()
}

pub fn sweep_table(param: SweepParam, rows: &[SweepRow]) -> String {
    let mut s = format!("{param},{}\n", MetricReport::CSV_HEADER);
    for r in rows {
        s += &format!("{},{}\n", r.value, r.report.csv_row());
    }
    s
}

/// Plot-ready series: the swept values on x and one list per metric.
pub fn sweep_series(param: SweepParam, rows: &[SweepRow]) -> Value {
    let col = |f: fn(&MetricReport) -> f64| rows.iter().map(|r| f(&r.report)).collect::<Vec<_>>();
    json!({
        "param": param.name(),
        "x": rows.iter().map(|r| r.value).collect::<Vec<_>>(),
        "series": {
            "rmse": col(|m| m.rmse),
            "ndcg_rating": col(|m| m.ndcg_rating),
            "mrr_rating": col(|m| m.mrr_rating),
            "ndcg_ranking": col(|m| m.ndcg_ranking),
            "mrr_ranking": col(|m| m.mrr_ranking),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_singleton_is_merged() {
        assert_eq!(batch_ranges(5, 2), vec![0..2, 2..5]);
        assert_eq!(batch_ranges(4, 2), vec![0..2, 2..4]);
        assert_eq!(batch_ranges(1, 4), vec![0..1]);
        assert!(batch_ranges(0, 4).is_empty());
    }

    #[test]
    fn overrides() {
        let mut cfg = TrainConfig::default();
        cfg.apply_override("loss.lambda=0.005").unwrap();
        assert_eq!(cfg.loss_weights.lambda, 0.005);
        cfg.apply_override("ablation_mode=vgae_only").unwrap();
        assert_eq!(cfg.ablation_mode, AblationMode::VgaeOnly);
        cfg.apply_override("max_neighbors=10").unwrap();
        assert_eq!(cfg.max_neighbors, Some(10));
        assert!(cfg.apply_override("loss.gamma=1").is_err());
        assert!(cfg.apply_override("epochs=-1").is_err());
        assert!(cfg.apply_override("noequals").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(TrainConfig::from_json(r#"{"epochs": 3}"#).is_ok());
        assert!(TrainConfig::from_json(r#"{"epoch": 3}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"loss_weights": {"alpha": 0.1}}"#).is_ok());
        assert!(TrainConfig::from_json(r#"{"loss_weights": {"gamma": 0.1}}"#).is_err());
    }

    #[test]
    fn presets_exist() {
        assert_eq!(sweep_preset("alpha").unwrap().1, &[0.01, 0.0045, 0.001]);
        assert_eq!(sweep_preset("beta").unwrap().1.len(), 4);
        assert!(sweep_preset("gamma").is_none());
    }
}
