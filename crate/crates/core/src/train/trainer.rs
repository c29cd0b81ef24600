use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::dataset::{few_shot_sample, resolve_splits, Label, ManifestEntry, Split};
use crate::encoder::{Model, TokenizedText};
use crate::error::{Error, Result};
use crate::rng;
use crate::train::config::TrainConfig;
use crate::train::data::{prepare_samples, PreparedSample};
use crate::train::optim::Adam;
use crate::train::step::run_batch;

pub const METRICS_HEADER: &str = "epoch,split,loss,accuracy,trainable_params,fingerprint";

/// One row of the metrics log. Epoch 0 is the untrained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    /// Percent correct, 0 to 100.
    pub accuracy: f64,
    pub trainable_params: usize,
    pub fingerprint: String,
}

impl MetricsRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{:.8},{:.6},{},{}",
            self.epoch, self.split, self.loss, self.accuracy, self.trainable_params, self.fingerprint
        )
    }
}

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{}", r.csv_line());
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub model: Model,
    pub metrics: Vec<MetricsRecord>,
}

/// Train and test samples decoded once and shared between runs.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Vec<PreparedSample>,
    pub test: Vec<PreparedSample>,
}

fn class_tokens(model: &Model) -> Result<Vec<TokenizedText>> {
    model.class_tokens(&Label::class_names())
}

/// Model described by `cfg`, fusion variant included.
pub fn build_model(cfg: &TrainConfig) -> Result<Model> {
    let mut model = Model::new(cfg.model_config())?;
    model.fusion = cfg.fusion;
    Ok(model)
}

/// Resolves splits, applies few-shot subsampling, and decodes the media.
/// Audio is decoded only if the config enables it.
pub fn prepare_data(cfg: &TrainConfig, entries: &[ManifestEntry], model: &Model) -> Result<PreparedData> {
    let (train, test) = resolve_splits(entries, cfg.test_fraction, cfg.seed)?;
    let train = match cfg.few_shot {
        Some(spec) => few_shot_sample(&train, spec)?,
        None => train,
    };
    let audio = cfg.modalities.audio;
    Ok(PreparedData {
        train: prepare_samples(&train.entries, model, cfg.frames_per_video, audio)?,
        test: prepare_samples(&test.entries, model, cfg.frames_per_video, audio)?,
    })
}

/// Mean loss and accuracy (percent) of `model` over `samples`, no gradients.
pub fn evaluate_samples(
    model: &Model,
    samples: &[PreparedSample],
    batch_size: usize,
) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    let tokens = class_tokens(model)?;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&PreparedSample> = chunk.iter().collect();
        let out = run_batch(model, &tokens, &refs, false)?;
        loss += out.losses.iter().sum::<f64>();
        correct += out
            .predictions
            .iter()
            .zip(chunk)
            .filter(|(p, s)| **p == s.label.index())
            .count();
    }
    let n = samples.len() as f64;
    Ok((loss / n, 100.0 * correct as f64 / n))
}

/// Batch gradient of the mean loss, flattened in declaration order.
pub fn batch_gradient(model: &Model, batch: &[PreparedSample]) -> Result<(f64, Vec<f64>)> {
    let tokens = class_tokens(model)?;
    let refs: Vec<&PreparedSample> = batch.iter().collect();
    let out = run_batch(model, &tokens, &refs, true)?;
    let loss = out.losses.iter().sum::<f64>() / batch.len() as f64;
    Ok((loss, out.grads.expect("gradients requested")))
}

fn record(cfg: &TrainConfig, model: &Model, epoch: usize, split: Split, loss: f64, accuracy: f64) -> MetricsRecord {
    MetricsRecord {
        epoch,
        split,
        loss,
        accuracy,
        trainable_params: model.trainable_param_count(),
        fingerprint: cfg.fingerprint(),
    }
}

/// Trains `model` in place on prepared data. Only trainable parameters move.
pub fn train_prepared(cfg: &TrainConfig, mut model: Model, data: &PreparedData) -> Result<TrainRun> {
    cfg.validate()?;
    if cfg.few_shot.is_some_and(|f| f.k == 0) {
        return Err(Error::ZeroShotTraining);
    }
    if data.train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let tokens = class_tokens(&model)?;
    let mut metrics = Vec::new();
    let (loss, acc) = evaluate_samples(&model, &data.train, cfg.batch_size)?;
    metrics.push(record(cfg, &model, 0, Split::Train, loss, acc));
    if !data.test.is_empty() {
        let (loss, acc) = evaluate_samples(&model, &data.test, cfg.batch_size)?;
        metrics.push(record(cfg, &model, 0, Split::Test, loss, acc));
    }

    let mut adam = Adam::new(cfg.optimizer, cfg.learning_rate, model.trainable_param_count());
    let mut shuffle = rng::stream(cfg.seed, rng::purpose::SHUFFLE);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PreparedSample> = chunk.iter().map(|&i| &data.train[i]).collect();
            let out = run_batch(&model, &tokens, &batch, true)?;
            loss_sum += out.losses.iter().sum::<f64>();
            correct += out
                .predictions
                .iter()
                .zip(&batch)
                .filter(|(p, s)| **p == s.label.index())
                .count();
            let grads = out.grads.expect("gradients requested");
            let params = model
                .param_slices_mut()
                .into_iter()
                .filter(|(_, _, t)| *t)
                .map(|(_, s, _)| s);
            adam.step(params, &grads);
        }
        let n = data.train.len() as f64;
        metrics.push(record(cfg, &model, epoch, Split::Train, loss_sum / n, 100.0 * correct as f64 / n));
        if cfg.eval_each_epoch && !data.test.is_empty() {
            let (loss, acc) = evaluate_samples(&model, &data.test, cfg.batch_size)?;
            metrics.push(record(cfg, &model, epoch, Split::Test, loss, acc));
        }
    }
    if !cfg.eval_each_epoch && cfg.epochs > 0 && !data.test.is_empty() {
        let (loss, acc) = evaluate_samples(&model, &data.test, cfg.batch_size)?;
        metrics.push(record(cfg, &model, cfg.epochs, Split::Test, loss, acc));
    }
    Ok(TrainRun { model, metrics })
}

/// Full pipeline from manifest entries: split, sample, decode, train.
pub fn train(cfg: &TrainConfig, entries: &[ManifestEntry]) -> Result<TrainRun> {
    cfg.validate()?;
    if cfg.few_shot.is_some_and(|f| f.k == 0) {
        return Err(Error::ZeroShotTraining);
    }
    let model = build_model(cfg)?;
    let data = prepare_data(cfg, entries, &model)?;
    train_prepared(cfg, model, &data)
}

/// Checkpoint metadata: the training config that produced the weights.
pub fn checkpoint_meta(cfg: &TrainConfig) -> serde_json::Value {
    serde_json::json!({ "train_config": cfg })
}

pub fn config_from_meta(meta: Option<&serde_json::Value>) -> Option<TrainConfig> {
    meta.and_then(|m| m.get("train_config"))
        .and_then(|v| serde_json::from_value(v.clone()).ok())
}

/// Evaluates a checkpointed model on one split of a manifest. Splits and
/// frame count follow the config stored in the checkpoint, or defaults.
pub fn evaluate(checkpoint_path: &std::path::Path, entries: &[ManifestEntry], split: Split) -> Result<MetricsRecord> {
    let (model, meta) = checkpoint::load(checkpoint_path)?;
    let cfg = config_from_meta(meta.as_ref()).unwrap_or_default();
    evaluate_model(&cfg, &model, entries, split)
}

pub fn evaluate_model(
    cfg: &TrainConfig,
    model: &Model,
    entries: &[ManifestEntry],
    split: Split,
) -> Result<MetricsRecord> {
    let (train, test) = resolve_splits(entries, cfg.test_fraction, cfg.seed)?;
    let chosen = match split {
        Split::Train => train,
        Split::Test => test,
    };
    let samples = prepare_samples(&chosen.entries, model, cfg.frames_per_video, model.audio_enabled())?;
    let (loss, accuracy) = evaluate_samples(model, &samples, cfg.batch_size)?;
    Ok(record(cfg, model, cfg.epochs, split, loss, accuracy))
}
