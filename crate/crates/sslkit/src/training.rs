//! Optimization loops for the three regimes, their schedules, and
//! linear-probe training on frozen representations.

use crate::checkpoint::{hash_f64s, Checkpoint, CheckpointMeta};
use crate::data::{
    augment, balanced_epoch_from_indices, default_n_c, mixup, AugmentConfig, FoldPlan,
    ImageSample, LabeledDataset,
};
use crate::encoder::{
    encode_backward, encode_with_cache, l2_normalize_backward, ClassifierHead, EncoderCache,
    EncoderConfig, EncoderState, ProjectionHead, ProjectionKind,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, MetricsReport};
use crate::losses::{
    cross_entropy, inverse_frequency_weights, sinkhorn_assign, supcon_loss, swav_loss,
    AssignmentQueue, PrototypeBank, CODE_TEMPERATURE,
};
use crate::numeric::{l2_normalize, softmax_rows, Matrix};
use crate::rng::{self, tag};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Supervised,
    Swav,
    Supcon,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Regime::Supervised => "supervised",
            Regime::Swav => "swav",
            Regime::Supcon => "supcon",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub regime: Regime,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Views per image (M) for the contrastive regimes.
    pub views: usize,
    /// Supervised-contrastive temperature.
    pub tau: f64,
    /// Sinkhorn entropic regularization.
    pub epsilon: f64,
    pub sinkhorn_iters: usize,
    /// Prototype count K.
    pub prototype_count: usize,
    pub d_proj: usize,
    pub code_temperature: f64,
    pub queue_capacity: usize,
    pub queue_start_epoch: usize,
    pub prototype_freeze_epochs: usize,
    /// Per-class draws per balanced epoch; None = median class support.
    pub n_c: Option<usize>,
    pub mixup_enabled: bool,
    pub mixup_alpha: f64,
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            regime: Regime::Supervised,
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            views: 2,
            tau: 0.2,
            epsilon: 0.03,
            sinkhorn_iters: 3,
            prototype_count: 64,
            d_proj: 16,
            code_temperature: CODE_TEMPERATURE,
            queue_capacity: 256,
            queue_start_epoch: 15,
            prototype_freeze_epochs: 2,
            n_c: None,
            mixup_enabled: false,
            mixup_alpha: 0.2,
            seed: 0,
            encoder: EncoderConfig::default(),
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("views", self.views),
            ("prototype_count", self.prototype_count),
            ("d_proj", self.d_proj),
            ("sinkhorn_iters", self.sinkhorn_iters),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be >= 1, got 0")));
            }
        }
        let positive_real = [
            ("learning_rate", self.learning_rate),
            ("tau", self.tau),
            ("epsilon", self.epsilon),
            ("code_temperature", self.code_temperature),
            ("mixup_alpha", self.mixup_alpha),
        ];
        for (name, v) in positive_real {
            if v <= 0.0 {
                return Err(Error::config(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.momentum < 0.0 || self.momentum >= 1.0 {
            return Err(Error::config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::config("weight_decay must be >= 0"));
        }
        if matches!(self.regime, Regime::Swav | Regime::Supcon) && self.views < 2 {
            return Err(Error::config(format!(
                "views must be >= 2 for regime {}, got {}",
                self.regime, self.views
            )));
        }
        if let Some(n_c) = self.n_c {
            if n_c == 0 {
                return Err(Error::config("n_c must be >= 1"));
            }
        }
        self.augment.validate()
    }

    /// Named presets; unknown names list the known ones.
    pub fn preset(name: &str) -> Result<TrainConfig> {
        let base = TrainConfig::default();
        let config = match name {
            // full-scale protocols from the source experiments
            "full-short" => TrainConfig {
                regime: Regime::Supervised,
                epochs: 20,
                batch_size: 256,
                ..base
            },
            "full-long" => TrainConfig {
                regime: Regime::Supervised,
                epochs: 100,
                batch_size: 256,
                ..base
            },
            "full-mixup" => TrainConfig {
                regime: Regime::Supervised,
                epochs: 100,
                batch_size: 256,
                mixup_enabled: true,
                ..base
            },
            "full-swav" => TrainConfig {
                regime: Regime::Swav,
                epochs: 200,
                batch_size: 256,
                prototype_count: 1000,
                d_proj: 128,
                epsilon: 0.03,
                sinkhorn_iters: 3,
                queue_capacity: 1280,
                queue_start_epoch: 15,
                prototype_freeze_epochs: 2,
                ..base
            },
            "full-supcon" => TrainConfig {
                regime: Regime::Supcon,
                epochs: 100,
                batch_size: 256,
                tau: 0.2,
                d_proj: 128,
                ..base
            },
            // desk-scale counterparts sized for the synthetic sets
            "desk-supervised" => TrainConfig {
                regime: Regime::Supervised,
                epochs: 20,
                batch_size: 32,
                learning_rate: 0.01,
                augment: desk_augment(),
                ..base
            },
            "desk-swav" => TrainConfig {
                regime: Regime::Swav,
                epochs: 50,
                batch_size: 32,
                prototype_count: 64,
                d_proj: 16,
                queue_capacity: 256,
                queue_start_epoch: 15,
                prototype_freeze_epochs: 2,
                augment: desk_augment(),
                ..base
            },
            "desk-supcon" => TrainConfig {
                regime: Regime::Supcon,
                epochs: 30,
                batch_size: 32,
                d_proj: 16,
                augment: desk_augment(),
                ..base
            },
            other => {
                return Err(Error::config(format!(
                    "unknown preset {other:?}; known presets: full-short, full-long, \
                     full-mixup, full-swav, full-supcon, desk-supervised, desk-swav, \
                     desk-supcon"
                )))
            }
        };
        Ok(config)
    }
}

/// Gentle jitter for the synthetic sets, whose class hues sit closer
/// together than the default hue_delta would preserve.
fn desk_augment() -> AugmentConfig {
    AugmentConfig {
        hue_delta: 0.01,
        sat_range: (0.9, 1.1),
        val_range: (0.9, 1.1),
        ..AugmentConfig::default()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// Held-out macro-F1 when labels and a fold are available.
    pub metric: Option<f64>,
    /// Queue rows that joined the Sinkhorn problem this epoch (max).
    pub queue_rows: usize,
    pub proto_hash: Option<String>,
    pub skipped_batches: usize,
    pub wall_ms: u128,
}

#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("epoch,loss,metric,queue_rows,proto_hash,skipped_batches,wall_ms\n");
        for r in &self.records {
            let metric = r.metric.map(|m| m.to_string()).unwrap_or_default();
            let hash = r.proto_hash.clone().unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.epoch, r.loss, metric, r.queue_rows, hash, r.skipped_batches, r.wall_ms
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn final_loss_below_initial(&self, window: usize) -> bool {
        if self.records.len() < 2 {
            return false;
        }
        let w = window.min(self.records.len());
        let head: f64 =
            self.records[..w].iter().map(|r| r.loss).sum::<f64>() / w as f64;
        let tail: f64 = self.records[self.records.len() - w..]
            .iter()
            .map(|r| r.loss)
            .sum::<f64>()
            / w as f64;
        tail < head
    }
}

/// Classic SGD with momentum and weight decay:
/// v = momentum*v + grad + weight_decay*param; param -= lr*velocity.
pub fn sgd_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::Shape {
            expected: format!("{} gradients and velocities", params.len()),
            actual: format!("{} grads, {} velocities", grads.len(), velocity.len()),
        });
    }
    for i in 0..params.len() {
        velocity[i] = momentum * velocity[i] + grads[i] + weight_decay * params[i];
        params[i] -= lr * velocity[i];
    }
    Ok(())
}

/// Standardization statistics carried with every trained model.
pub type ChannelStats = ([f64; 3], [f64; 3]);

#[derive(Debug, Clone)]
pub struct SupervisedModel {
    pub encoder: EncoderState,
    pub head: ClassifierHead,
    pub stats: ChannelStats,
    pub class_names: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SwavModel {
    pub encoder: EncoderState,
    pub projection: ProjectionHead,
    pub prototypes: PrototypeBank,
    pub stats: ChannelStats,
}

#[derive(Debug, Clone)]
pub struct SupconModel {
    pub encoder: EncoderState,
    pub projection: ProjectionHead,
    pub stats: ChannelStats,
}

fn check_loss_finite(value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::numerical(format!("training loss became {value}")))
    }
}

fn one_hot(labels: &[usize], c: usize) -> Matrix {
    let mut m = Matrix::zeros(labels.len(), c);
    for (i, &l) in labels.iter().enumerate() {
        m.set(i, l, 1.0);
    }
    m
}

/// Augment a batch in parallel with per-sample derived seeds.
fn augment_batch(
    dataset: &LabeledDataset,
    indices: &[usize],
    cfg: &AugmentConfig,
    seed: u64,
    epoch: usize,
    batch: usize,
    view: usize,
) -> Result<Vec<ImageSample>> {
    indices
        .par_iter()
        .enumerate()
        .map(|(pos, &i)| {
            let s = rng::derive_seed(
                seed,
                &[tag::AUGMENT, epoch as u64, batch as u64, pos as u64, view as u64],
            );
            augment(dataset.sample(i), cfg, s)
        })
        .collect()
}

/// Forward a batch through the encoder in parallel, keeping caches.
fn encode_batch(
    images: &[ImageSample],
    encoder: &EncoderState,
) -> Result<(Matrix, Vec<EncoderCache>)> {
    let results: Vec<(Vec<f64>, EncoderCache)> = images
        .par_iter()
        .map(|img| encode_with_cache(img, encoder))
        .collect::<Result<Vec<_>>>()?;
    let mut z = Matrix::zeros(images.len(), encoder.config.d_emb);
    let mut caches = Vec::with_capacity(images.len());
    for (i, (zi, cache)) in results.into_iter().enumerate() {
        z.row_mut(i).copy_from_slice(&zi);
        caches.push(cache);
    }
    Ok((z, caches))
}

/// Per-sample encoder backward passes, reduced in deterministic order.
fn encoder_backward_batch(
    encoder: &EncoderState,
    caches: &[EncoderCache],
    dz: &Matrix,
    grads: &mut [f64],
) -> Result<()> {
    let partials: Vec<Vec<f64>> = caches
        .par_iter()
        .enumerate()
        .map(|(i, cache)| {
            let mut g = vec![0.0; encoder.params.len()];
            encode_backward(encoder, cache, dz.row(i), &mut g)?;
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    for partial in partials {
        for (g, p) in grads.iter_mut().zip(&partial) {
            *g += p;
        }
    }
    Ok(())
}

fn resolve_split(
    dataset: &LabeledDataset,
    plan: Option<(&FoldPlan, usize)>,
) -> Result<(Vec<usize>, Option<Vec<usize>>)> {
    match plan {
        Some((plan, fold)) => {
            plan.validate_for(dataset, fold)?;
            let train = plan.complement_indices(fold);
            let val = plan.fold_indices(fold);
            if train.is_empty() {
                return Err(Error::data("training fold is empty"));
            }
            Ok((train, Some(val)))
        }
        None => Ok(((0..dataset.len()).collect(), None)),
    }
}

/// Run directory writer: config.json, history.csv, checkpoints/ keeping
/// the latest and the best-by-metric epoch files.
struct RunWriter {
    dir: PathBuf,
    best: Option<(f64, PathBuf)>,
    last: Option<PathBuf>,
}

impl RunWriter {
    fn new(dir: Option<&Path>, config: &TrainConfig) -> Result<Option<RunWriter>> {
        let Some(dir) = dir else { return Ok(None) };
        let ckpt_dir = dir.join("checkpoints");
        std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
        let cfg_path = dir.join("config.json");
        let text = serde_json::to_string_pretty(config).expect("serializable");
        std::fs::write(&cfg_path, text).map_err(|e| Error::io(&cfg_path, e))?;
        Ok(Some(RunWriter {
            dir: dir.to_path_buf(),
            best: None,
            last: None,
        }))
    }

    /// Higher metric wins; falls back to lower loss when no metric exists.
    fn write_epoch(
        &mut self,
        epoch: usize,
        checkpoint: &Checkpoint,
        record: &EpochRecord,
    ) -> Result<()> {
        let path = self.dir.join("checkpoints").join(format!("epoch_{epoch}.ckpt"));
        checkpoint.save(&path)?;
        let score = record.metric.unwrap_or(-record.loss);
        let is_best = self.best.as_ref().is_none_or(|(s, _)| score > *s);
        let mut removable = Vec::new();
        if let Some(prev_last) = self.last.replace(path.clone()) {
            removable.push(prev_last);
        }
        if is_best {
            if let Some((_, prev_best)) = self.best.replace((score, path.clone())) {
                removable.push(prev_best);
            }
        }
        for stale in removable {
            let keep_best = self.best.as_ref().is_some_and(|(_, p)| *p == stale);
            let keep_last = self.last.as_ref().is_some_and(|p| *p == stale);
            if !keep_best && !keep_last && stale.exists() {
                std::fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
            }
        }
        Ok(())
    }

    fn finish(&self, history: &TrainHistory) -> Result<()> {
        history.save_csv(&self.dir.join("history.csv"))
    }
}

fn stats_for(dataset: &LabeledDataset, indices: &[usize]) -> Result<ChannelStats> {
    dataset.channel_stats(indices)
}

/// Balanced / weighted cross-entropy training, optionally with mixup.
pub fn train_supervised(
    config: &TrainConfig,
    dataset: &LabeledDataset,
    plan: Option<(&FoldPlan, usize)>,
    run_dir: Option<&Path>,
) -> Result<(SupervisedModel, TrainHistory)> {
    config.validate()?;
    train_supervised_inner(config, dataset, plan, run_dir, true)
}

/// Unbalanced, unweighted cross-entropy over the natural distribution.
/// Control arm for quantifying what balancing buys on the tail.
pub fn train_supervised_unbalanced(
    config: &TrainConfig,
    dataset: &LabeledDataset,
    plan: Option<(&FoldPlan, usize)>,
    run_dir: Option<&Path>,
) -> Result<(SupervisedModel, TrainHistory)> {
    config.validate()?;
    train_supervised_inner(config, dataset, plan, run_dir, false)
}

fn train_supervised_inner(
    config: &TrainConfig,
    dataset: &LabeledDataset,
    plan: Option<(&FoldPlan, usize)>,
    run_dir: Option<&Path>,
    balanced: bool,
) -> Result<(SupervisedModel, TrainHistory)> {
    let (train_idx, val_idx) = resolve_split(dataset, plan)?;
    let stats = stats_for(dataset, &train_idx)?;
    let mut aug = config.augment.clone();
    aug.standardize_mean = stats.0;
    aug.standardize_std = stats.1;

    let c = dataset.num_classes();
    let mut train_counts = vec![0usize; c];
    for &i in &train_idx {
        train_counts[dataset.label(i)] += 1;
    }
    let class_weights = if balanced {
        inverse_frequency_weights(&train_counts)
    } else {
        vec![1.0; c]
    };
    let n_c = config.n_c.unwrap_or_else(|| default_n_c(&train_counts));

    let mut encoder = EncoderState::init(config.encoder.clone(), config.seed);
    let mut head = ClassifierHead::init(config.encoder.d_emb, c, rng::derive_seed(config.seed, &[tag::INIT, 100]));
    let mut enc_vel = vec![0.0; encoder.params.len()];
    let mut head_vel = vec![0.0; head.linear.params.len()];

    let mut history = TrainHistory::default();
    let mut writer = RunWriter::new(run_dir, config)?;

    for epoch in 0..config.epochs {
        let start = Instant::now();
        let epoch_seed = rng::derive_seed(config.seed, &[tag::EPOCH_SHUFFLE, epoch as u64]);
        let sequence = if balanced {
            let seq = balanced_epoch_from_indices(dataset, Some(&train_idx), n_c, epoch_seed)?;
            // balanced contract: every class appears exactly n_c times
            let mut hist = vec![0usize; c];
            for &i in &seq {
                hist[dataset.label(i)] += 1;
            }
            if hist.iter().any(|&h| h != n_c) {
                return Err(Error::numerical(format!(
                    "balanced epoch violated its contract: {hist:?} != {n_c}"
                )));
            }
            seq
        } else {
            let mut seq = train_idx.clone();
            seq.shuffle(&mut rng::stream(epoch_seed, &[]));
            seq
        };

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (batch_idx, chunk) in sequence.chunks(config.batch_size).enumerate() {
            let augmented = augment_batch(dataset, chunk, &aug, config.seed, epoch, batch_idx, 0)?;
            let labels: Vec<usize> = chunk.iter().map(|&i| dataset.label(i)).collect();
            let targets = one_hot(&labels, c);
            let (images, targets) = if config.mixup_enabled && chunk.len() >= 2 {
                let mseed = rng::derive_seed(
                    config.seed,
                    &[tag::MIXUP, epoch as u64, batch_idx as u64],
                );
                mixup(&augmented, &targets, config.mixup_alpha, mseed)?
            } else {
                (augmented, targets)
            };

            let (z, caches) = encode_batch(&images, &encoder)?;
            let logits = head.linear.forward_batch(&z)?;
            let probs = softmax_rows(&logits)?;
            let out = cross_entropy(&probs, &targets, &class_weights)?;
            epoch_loss += check_loss_finite(out.value)?;
            batches += 1;

            let mut head_grads = vec![0.0; head.linear.params.len()];
            let dz = head.linear.backward_batch(&z, &out.grad_logits, &mut head_grads)?;
            let mut enc_grads = vec![0.0; encoder.params.len()];
            encoder_backward_batch(&encoder, &caches, &dz, &mut enc_grads)?;

            sgd_step(
                &mut encoder.params,
                &enc_grads,
                &mut enc_vel,
                config.learning_rate,
                config.momentum,
                config.weight_decay,
            )?;
            sgd_step(
                &mut head.linear.params,
                &head_grads,
                &mut head_vel,
                config.learning_rate,
                config.momentum,
                config.weight_decay,
            )?;
        }

        let metric = match &val_idx {
            Some(val) if !val.is_empty() => {
                let report = evaluate_model(&encoder, &head, dataset, val, (&stats.0, &stats.1))?;
                report.macro_metrics.f1
            }
            _ => None,
        };
        let record = EpochRecord {
            epoch,
            loss: epoch_loss / batches.max(1) as f64,
            metric,
            queue_rows: 0,
            proto_hash: None,
            skipped_batches: 0,
            wall_ms: start.elapsed().as_millis(),
        };
        if let Some(w) = writer.as_mut() {
            let model = SupervisedModel {
                encoder: encoder.clone(),
                head: head.clone(),
                stats,
                class_names: dataset.class_names().to_vec(),
            };
            w.write_epoch(epoch, &supervised_checkpoint(&model), &record)?;
        }
        history.records.push(record);
    }
    if let Some(w) = writer.as_ref() {
        w.finish(&history)?;
    }
    Ok((
        SupervisedModel {
            encoder,
            head,
            stats,
            class_names: dataset.class_names().to_vec(),
        },
        history,
    ))
}

/// Self-supervised pretraining with swapped prototype assignment.
/// Labels are ignored; sampling follows the natural distribution.
pub fn train_swav(
    config: &TrainConfig,
    dataset: &LabeledDataset,
    run_dir: Option<&Path>,
) -> Result<(SwavModel, TrainHistory)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::data("empty dataset"));
    }
    let all: Vec<usize> = (0..dataset.len()).collect();
    let stats = stats_for(dataset, &all)?;
    let mut aug = config.augment.clone();
    aug.standardize_mean = stats.0;
    aug.standardize_std = stats.1;

    let m = config.views;
    let mut encoder = EncoderState::init(config.encoder.clone(), config.seed);
    let mut projection = ProjectionHead::init(
        config.encoder.d_emb,
        config.d_proj,
        ProjectionKind::Swav,
        rng::derive_seed(config.seed, &[tag::INIT, 200]),
    );
    let mut prototypes = PrototypeBank::init(config.prototype_count, config.d_proj, config.seed)?;
    let mut queue = AssignmentQueue::new(config.queue_capacity, config.queue_start_epoch);

    let mut enc_vel = vec![0.0; encoder.params.len()];
    let mut proj_vel = vec![0.0; projection.linear.params.len()];
    let mut proto_vel = vec![0.0; prototypes.vectors.data().len()];

    let mut history = TrainHistory::default();
    let mut writer = RunWriter::new(run_dir, config)?;

    for epoch in 0..config.epochs {
        let start = Instant::now();
        let queue_active = epoch >= config.queue_start_epoch;
        let frozen = epoch < config.prototype_freeze_epochs;
        prototypes.frozen = frozen;

        let mut sequence = all.clone();
        sequence.shuffle(&mut rng::stream(
            rng::derive_seed(config.seed, &[tag::EPOCH_SHUFFLE, epoch as u64]),
            &[],
        ));

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        let mut skipped = 0usize;
        let mut queue_rows_used = 0usize;
        for (batch_idx, chunk) in sequence.chunks(config.batch_size).enumerate() {
            let b = chunk.len();
            if b < 2 {
                skipped += 1;
                continue;
            }
            // per-view forward passes
            let mut view_z = Vec::with_capacity(m);
            let mut view_caches = Vec::with_capacity(m);
            let mut view_raw = Vec::with_capacity(m);
            let mut view_u = Vec::with_capacity(m);
            for view in 0..m {
                let images =
                    augment_batch(dataset, chunk, &aug, config.seed, epoch, batch_idx, view)?;
                let (z, caches) = encode_batch(&images, &encoder)?;
                let raw = projection.linear.forward_batch(&z)?;
                let mut u = Matrix::zeros(b, config.d_proj);
                for i in 0..b {
                    u.row_mut(i).copy_from_slice(&l2_normalize(raw.row(i))?);
                }
                view_z.push(z);
                view_caches.push(caches);
                view_raw.push(raw);
                view_u.push(u);
            }

            // scores and Sinkhorn targets (queue rows enlarge the problem
            // but only in-batch rows become targets)
            let queue_matrix = if queue_active { queue.as_matrix() } else { None };
            let queue_scores = queue_matrix
                .as_ref()
                .map(|q| prototypes.scores(q))
                .transpose()?;
            if let Some(qs) = &queue_scores {
                queue_rows_used = queue_rows_used.max(qs.rows());
            }
            let mut codes = Vec::with_capacity(m);
            let mut targets = Vec::with_capacity(m);
            let mut view_scores = Vec::with_capacity(m);
            for u in &view_u {
                let scores = prototypes.scores(u)?;
                let stacked = match &queue_scores {
                    Some(qs) => {
                        let mut rows: Vec<Vec<f64>> =
                            (0..b).map(|i| scores.row(i).to_vec()).collect();
                        rows.extend((0..qs.rows()).map(|i| qs.row(i).to_vec()));
                        Matrix::from_rows(&rows)?
                    }
                    None => scores.clone(),
                };
                let assigned = sinkhorn_assign(&stacked, config.epsilon, config.sinkhorn_iters)?;
                let target_rows: Vec<Vec<f64>> =
                    (0..b).map(|i| assigned.row(i).to_vec()).collect();
                targets.push(Matrix::from_rows(&target_rows)?);
                let mut logits = scores.clone();
                logits.scale(1.0 / config.code_temperature);
                codes.push(softmax_rows(&logits)?);
                view_scores.push(scores);
            }

            let out = swav_loss(&codes, &targets)?;
            epoch_loss += check_loss_finite(out.value)?;
            batches += 1;

            // backward: loss -> score logits -> u -> raw -> z -> encoder
            let mut enc_grads = vec![0.0; encoder.params.len()];
            let mut proj_grads = vec![0.0; projection.linear.params.len()];
            let mut proto_grads = vec![0.0; prototypes.vectors.data().len()];
            for view in 0..m {
                let mut grad_scores = out.grad_logits[view].clone();
                grad_scores.scale(1.0 / config.code_temperature);
                let du = grad_scores.matmul(&prototypes.vectors)?;
                if !frozen {
                    let dv = grad_scores.matmul_tn(&view_u[view])?;
                    for (g, d) in proto_grads.iter_mut().zip(dv.data()) {
                        *g += d;
                    }
                }
                let mut d_raw = Matrix::zeros(b, config.d_proj);
                for i in 0..b {
                    let g = l2_normalize_backward(view_raw[view].row(i), du.row(i));
                    d_raw.row_mut(i).copy_from_slice(&g);
                }
                let dz = projection
                    .linear
                    .backward_batch(&view_z[view], &d_raw, &mut proj_grads)?;
                encoder_backward_batch(&encoder, &view_caches[view], &dz, &mut enc_grads)?;
            }

            sgd_step(
                &mut encoder.params,
                &enc_grads,
                &mut enc_vel,
                config.learning_rate,
                config.momentum,
                config.weight_decay,
            )?;
            sgd_step(
                &mut projection.linear.params,
                &proj_grads,
                &mut proj_vel,
                config.learning_rate,
                config.momentum,
                config.weight_decay,
            )?;
            if !frozen {
                sgd_step(
                    prototypes.vectors.data_mut(),
                    &proto_grads,
                    &mut proto_vel,
                    config.learning_rate,
                    config.momentum,
                    config.weight_decay,
                )?;
                prototypes.renormalize();
            }

            // queue receives this batch only after the step
            for u in &view_u {
                queue.update(u);
            }
        }
        if batches == 0 {
            return Err(Error::data("no usable batches in epoch"));
        }

        let record = EpochRecord {
            epoch,
            loss: epoch_loss / batches as f64,
            metric: None,
            queue_rows: queue_rows_used,
            proto_hash: Some(hash_f64s(prototypes.vectors.data())),
            skipped_batches: skipped,
            wall_ms: start.elapsed().as_millis(),
        };
        if let Some(w) = writer.as_mut() {
            let model = SwavModel {
                encoder: encoder.clone(),
                projection: projection.clone(),
                prototypes: prototypes.clone(),
                stats,
            };
            w.write_epoch(epoch, &swav_checkpoint(&model), &record)?;
        }
        history.records.push(record);
    }
    if let Some(w) = writer.as_ref() {
        w.finish(&history)?;
    }
    Ok((
        SwavModel {
            encoder,
            projection,
            prototypes,
            stats,
        },
        history,
    ))
}

/// Supervised contrastive pretraining over balanced epochs.
pub fn train_supcon(
    config: &TrainConfig,
    dataset: &LabeledDataset,
    run_dir: Option<&Path>,
) -> Result<(SupconModel, TrainHistory)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::data("empty dataset"));
    }
    let all: Vec<usize> = (0..dataset.len()).collect();
    let stats = stats_for(dataset, &all)?;
    let mut aug = config.augment.clone();
    aug.standardize_mean = stats.0;
    aug.standardize_std = stats.1;

    let m = config.views;
    let n_c = config.n_c.unwrap_or_else(|| default_n_c(dataset.class_counts()));
    let mut encoder = EncoderState::init(config.encoder.clone(), config.seed);
    let mut projection = ProjectionHead::init(
        config.encoder.d_emb,
        config.d_proj,
        ProjectionKind::Supcon,
        rng::derive_seed(config.seed, &[tag::INIT, 300]),
    );
    let mut enc_vel = vec![0.0; encoder.params.len()];
    let mut proj_vel = vec![0.0; projection.linear.params.len()];

    let mut history = TrainHistory::default();
    let mut writer = RunWriter::new(run_dir, config)?;

    for epoch in 0..config.epochs {
        let start = Instant::now();
        let epoch_seed = rng::derive_seed(config.seed, &[tag::EPOCH_SHUFFLE, epoch as u64]);
        let sequence = balanced_epoch_from_indices(dataset, None, n_c, epoch_seed)?;

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        let mut skipped = 0usize;
        for (batch_idx, chunk) in sequence.chunks(config.batch_size).enumerate() {
            let b = chunk.len();
            if b < 2 {
                skipped += 1;
                continue;
            }
            let mut view_z = Vec::with_capacity(m);
            let mut view_caches = Vec::with_capacity(m);
            let mut view_raw = Vec::with_capacity(m);
            let mut u_rows: Vec<Vec<f64>> = Vec::with_capacity(m * b);
            for view in 0..m {
                let images =
                    augment_batch(dataset, chunk, &aug, config.seed, epoch, batch_idx, view)?;
                let (z, caches) = encode_batch(&images, &encoder)?;
                let raw = projection.linear.forward_batch(&z)?;
                for i in 0..b {
                    u_rows.push(l2_normalize(raw.row(i))?);
                }
                view_z.push(z);
                view_caches.push(caches);
                view_raw.push(raw);
            }
            let u_all = Matrix::from_rows(&u_rows)?;
            let labels_per_row: Vec<usize> = (0..m)
                .flat_map(|_| chunk.iter().map(|&i| dataset.label(i)))
                .collect();

            let out = supcon_loss(&u_all, &labels_per_row, config.tau)?;
            epoch_loss += check_loss_finite(out.value)?;
            batches += 1;

            let mut enc_grads = vec![0.0; encoder.params.len()];
            let mut proj_grads = vec![0.0; projection.linear.params.len()];
            for view in 0..m {
                let mut d_raw = Matrix::zeros(b, config.d_proj);
                for i in 0..b {
                    let row = view * b + i;
                    let g = l2_normalize_backward(view_raw[view].row(i), out.grad_u.row(row));
                    d_raw.row_mut(i).copy_from_slice(&g);
                }
                let dz = projection
                    .linear
                    .backward_batch(&view_z[view], &d_raw, &mut proj_grads)?;
                encoder_backward_batch(&encoder, &view_caches[view], &dz, &mut enc_grads)?;
            }

            sgd_step(
                &mut encoder.params,
                &enc_grads,
                &mut enc_vel,
                config.learning_rate,
                config.momentum,
                config.weight_decay,
            )?;
            sgd_step(
                &mut projection.linear.params,
                &proj_grads,
                &mut proj_vel,
                config.learning_rate,
                config.momentum,
                config.weight_decay,
            )?;
        }
        if batches == 0 {
            return Err(Error::data("no usable batches in epoch"));
        }

        let record = EpochRecord {
            epoch,
            loss: epoch_loss / batches as f64,
            metric: None,
            queue_rows: 0,
            proto_hash: None,
            skipped_batches: skipped,
            wall_ms: start.elapsed().as_millis(),
        };
        if let Some(w) = writer.as_mut() {
            let model = SupconModel {
                encoder: encoder.clone(),
                projection: projection.clone(),
                stats,
            };
            w.write_epoch(epoch, &supcon_checkpoint(&model), &record)?;
        }
        history.records.push(record);
    }
    if let Some(w) = writer.as_ref() {
        w.finish(&history)?;
    }
    Ok((
        SupconModel {
            encoder,
            projection,
            stats,
        },
        history,
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub n_c: Option<usize>,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 100,
            batch_size: 128,
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            n_c: None,
            seed: 0,
        }
    }
}

/// Train only a linear classifier on frozen features and evaluate on the
/// held-out fold. The encoder is never mutated.
pub fn linear_probe(
    encoder: &EncoderState,
    stats: ChannelStats,
    dataset: &LabeledDataset,
    plan: &FoldPlan,
    fold: usize,
    probe: &ProbeConfig,
) -> Result<(ClassifierHead, MetricsReport, TrainHistory)> {
    plan.validate_for(dataset, fold)?;
    let train_idx = plan.complement_indices(fold);
    let val_idx = plan.fold_indices(fold);
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::data("probe needs non-empty train and validation folds"));
    }

    // features once, standardization only
    let std_cfg = AugmentConfig::standardize_only(stats.0, stats.1);
    let feature_rows: Vec<Vec<f64>> = (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let img = augment(dataset.sample(i), &std_cfg, 0)?;
            crate::encoder::encode(&img, encoder)
        })
        .collect::<Result<Vec<_>>>()?;
    let features = Matrix::from_rows(&feature_rows)?;

    let c = dataset.num_classes();
    if encoder.config.d_emb != features.cols() {
        return Err(Error::Shape {
            expected: format!("{} feature columns", encoder.config.d_emb),
            actual: format!("{}", features.cols()),
        });
    }
    let mut train_counts = vec![0usize; c];
    for &i in &train_idx {
        train_counts[dataset.label(i)] += 1;
    }
    let class_weights = inverse_frequency_weights(&train_counts);
    let n_c = probe.n_c.unwrap_or_else(|| default_n_c(&train_counts));

    let mut head = ClassifierHead::init(
        encoder.config.d_emb,
        c,
        rng::derive_seed(probe.seed, &[tag::INIT, 400]),
    );
    let mut head_vel = vec![0.0; head.linear.params.len()];
    let mut history = TrainHistory::default();

    for epoch in 0..probe.epochs {
        let start = Instant::now();
        let epoch_seed = rng::derive_seed(probe.seed, &[tag::EPOCH_SHUFFLE, epoch as u64]);
        let sequence = balanced_epoch_from_indices(dataset, Some(&train_idx), n_c, epoch_seed)?;
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in sequence.chunks(probe.batch_size) {
            let z_rows: Vec<Vec<f64>> = chunk.iter().map(|&i| features.row(i).to_vec()).collect();
            let z = Matrix::from_rows(&z_rows)?;
            let labels: Vec<usize> = chunk.iter().map(|&i| dataset.label(i)).collect();
            let targets = one_hot(&labels, c);
            let logits = head.linear.forward_batch(&z)?;
            let probs = softmax_rows(&logits)?;
            let out = cross_entropy(&probs, &targets, &class_weights)?;
            epoch_loss += check_loss_finite(out.value)?;
            batches += 1;
            let mut head_grads = vec![0.0; head.linear.params.len()];
            head.linear.backward_batch(&z, &out.grad_logits, &mut head_grads)?;
            sgd_step(
                &mut head.linear.params,
                &head_grads,
                &mut head_vel,
                probe.learning_rate,
                probe.momentum,
                probe.weight_decay,
            )?;
        }
        history.records.push(EpochRecord {
            epoch,
            loss: epoch_loss / batches.max(1) as f64,
            metric: None,
            queue_rows: 0,
            proto_hash: None,
            skipped_batches: 0,
            wall_ms: start.elapsed().as_millis(),
        });
    }

    // held-out predictions from the precomputed features
    let mut predictions = Vec::with_capacity(val_idx.len());
    for &i in &val_idx {
        let logits = head.linear.forward(features.row(i))?;
        let argmax = logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
            .map(|(j, _)| j)
            .expect("non-empty class set");
        predictions.push(argmax);
    }
    let labels: Vec<usize> = val_idx.iter().map(|&i| dataset.label(i)).collect();
    let confusion = crate::eval::confusion_matrix(&predictions, &labels, c)?;
    let report = crate::eval::per_class_metrics(&confusion, dataset.class_names())?;
    Ok((head, report, history))
}

pub fn supervised_checkpoint(model: &SupervisedModel) -> Checkpoint {
    Checkpoint {
        meta: CheckpointMeta {
            regime: "supervised".into(),
            encoder: model.encoder.config.clone(),
            class_names: Some(model.class_names.clone()),
            d_proj: None,
            standardize_mean: model.stats.0,
            standardize_std: model.stats.1,
        },
        tensors: vec![
            ("encoder".into(), model.encoder.params.clone()),
            ("classifier".into(), model.head.linear.params.clone()),
        ],
    }
}

pub fn swav_checkpoint(model: &SwavModel) -> Checkpoint {
    Checkpoint {
        meta: CheckpointMeta {
            regime: "swav".into(),
            encoder: model.encoder.config.clone(),
            class_names: None,
            d_proj: Some(model.projection.d_proj()),
            standardize_mean: model.stats.0,
            standardize_std: model.stats.1,
        },
        tensors: vec![
            ("encoder".into(), model.encoder.params.clone()),
            ("projection".into(), model.projection.linear.params.clone()),
            ("prototypes".into(), model.prototypes.vectors.data().to_vec()),
        ],
    }
}

pub fn supcon_checkpoint(model: &SupconModel) -> Checkpoint {
    Checkpoint {
        meta: CheckpointMeta {
            regime: "supcon".into(),
            encoder: model.encoder.config.clone(),
            class_names: None,
            d_proj: Some(model.projection.d_proj()),
            standardize_mean: model.stats.0,
            standardize_std: model.stats.1,
        },
        tensors: vec![
            ("encoder".into(), model.encoder.params.clone()),
            ("projection".into(), model.projection.linear.params.clone()),
        ],
    }
}

/// Rebuild an encoder (and standardization stats) from any checkpoint.
pub fn encoder_from_checkpoint(ckpt: &Checkpoint) -> Result<(EncoderState, ChannelStats)> {
    let params = ckpt.tensor("encoder")?.to_vec();
    let config = ckpt.meta.encoder.clone();
    if params.len() != config.param_count() {
        return Err(Error::data(format!(
            "encoder tensor has {} values, config expects {}",
            params.len(),
            config.param_count()
        )));
    }
    Ok((
        EncoderState { config, params },
        (ckpt.meta.standardize_mean, ckpt.meta.standardize_std),
    ))
}

/// Rebuild a supervised model (encoder + classifier) from a checkpoint.
pub fn supervised_from_checkpoint(ckpt: &Checkpoint) -> Result<SupervisedModel> {
    let (encoder, stats) = encoder_from_checkpoint(ckpt)?;
    let class_names = ckpt
        .meta
        .class_names
        .clone()
        .ok_or_else(|| Error::data("checkpoint carries no class names"))?;
    let params = ckpt.tensor("classifier")?.to_vec();
    let c = class_names.len();
    if params.len() != c * encoder.config.d_emb + c {
        return Err(Error::data("classifier tensor size mismatch"));
    }
    let head = ClassifierHead {
        linear: crate::encoder::LinearLayer {
            in_dim: encoder.config.d_emb,
            out_dim: c,
            params,
        },
    };
    Ok(SupervisedModel {
        encoder,
        head,
        stats,
        class_names,
    })
}

/// Cap rayon's worker count from the SSLKIT_THREADS environment variable.
/// Results do not depend on the thread count; only wall time does.
pub fn init_thread_pool() {
    if let Ok(value) = std::env::var("SSLKIT_THREADS") {
        if let Ok(n) = value.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
}
