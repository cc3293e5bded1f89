//! Training loop and clip-level evaluation.

use std::path::PathBuf;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::setting::{SampleRef, SplitPlan};
use crate::dataio::synth::derive_seed;
use crate::error::{Error, Result};
use crate::models::{Model, ModelKind, NUM_CLASSES};
use crate::nn::{Hyperparams, Mode, Optimizer, ParamStore};

// Tags separating the random streams derived from a run seed.
const SHUFFLE: u64 = 1;
const TRAIN_DRAW: u64 = 2;
const EVAL_DRAW: u64 = 3;

/// Stopping rules beyond the epoch budget, and where to keep the best model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    /// Stop once an epoch's training accuracy reaches this value.
    #[serde(default)]
    pub stop_at_train_acc: Option<f64>,
    /// Stop once validation accuracy reaches this value.
    #[serde(default)]
    pub stop_at_val_acc: Option<f64>,
    /// Written whenever validation accuracy improves.
    #[serde(skip)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// From the predictions made during the epoch's training passes.
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub loss: f64,
    /// Rows are true classes, columns predictions.
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
    pub clips: usize,
}

impl EvalResult {
    pub fn from_predictions(labels: &[usize], predictions: &[usize], loss: f64) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument("cannot evaluate an empty split".into()));
        }
        if labels.len() != predictions.len() {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {} predictions",
                labels.len(),
                predictions.len()
            )));
        }
        let mut confusion = [[0; NUM_CLASSES]; NUM_CLASSES];
        for (&l, &p) in labels.iter().zip(predictions) {
            confusion[l][p] += 1;
        }
        let correct: usize = (0..NUM_CLASSES).map(|k| confusion[k][k]).sum();
        Ok(EvalResult {
            accuracy: correct as f64 / labels.len() as f64,
            loss,
            confusion,
            clips: labels.len(),
        })
    }
}

/// Clips per optimisation step. The frame-level baseline's batch size counts
/// frames, so it takes as many whole clips as fit.
pub fn clips_per_batch(model: &Model<f32>, hp: &Hyperparams) -> usize {
    match model.config.kind {
        ModelKind::Cnn1 => (hp.batch_size / model.config.clip_len).max(1),
        _ => hp.batch_size,
    }
}

/// Accuracy and mean loss of `samples` with batch-norm in inference mode.
/// Dual-rate windows are drawn from `seed`, so repeated calls agree.
pub fn evaluate(model: &mut Model<f32>, data: &Dataset, samples: &[SampleRef], batch: usize, seed: u64) -> Result<EvalResult> {
    evaluate_in(model, data, samples, batch, seed, Mode::Eval)
}

fn evaluate_in(
    model: &mut Model<f32>,
    data: &Dataset,
    samples: &[SampleRef],
    batch: usize,
    seed: u64,
    mode: Mode,
) -> Result<EvalResult> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty split".into()));
    }
    let cfg = model.config.clone();
    let mut labels = Vec::with_capacity(samples.len());
    let mut predictions = Vec::with_capacity(samples.len());
    let mut loss_sum = 0.0;
    for (b, chunk) in samples.chunks(batch.max(1)).enumerate() {
        let draws: Vec<u64> = (0..chunk.len())
            .map(|i| derive_seed(seed, &[EVAL_DRAW, (b * batch + i) as u64]))
            .collect();
        let (input, l) = data.batch(&cfg, chunk, &draws)?;
        let (loss, preds) = model.loss_and_predictions(&input, &l, mode)?;
        loss_sum += loss * chunk.len() as f64;
        labels.extend(l);
        predictions.extend(preds);
    }
    EvalResult::from_predictions(&labels, &predictions, loss_sum / samples.len() as f64)
}

/// Validation accuracy with batch statistics instead of running averages,
/// computed on a copy so the model's running statistics are untouched.
pub fn evaluate_batch_stats(model: &Model<f32>, data: &Dataset, samples: &[SampleRef], batch: usize, seed: u64) -> Result<EvalResult> {
    let mut copy = model.clone();
    evaluate_in(&mut copy, data, samples, batch, seed, Mode::Train)
}

pub struct TrainOutcome {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters the model holds on return.
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

/// Train on `plan.train`, validating on `plan.val` after every epoch. On return
/// the model holds the parameters of the best validation epoch (the earliest
/// on ties).
pub fn train(
    model: &mut Model<f32>,
    data: &Dataset,
    plan: &SplitPlan,
    hp: &Hyperparams,
    seed: u64,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    if plan.train.is_empty() || plan.val.is_empty() {
        return Err(Error::InvalidArgument("training needs non-empty train and validation splits".into()));
    }
    let mut opt = Optimizer::new(hp.clone())?;
    let batch = clips_per_batch(model, hp);
    let cfg = model.config.clone();
    let mut order: Vec<SampleRef> = plan.train.clone();
    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, ParamStore<f32>)> = None;

    for epoch in 1..=hp.epochs {
        order.copy_from_slice(&plan.train);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[SHUFFLE, epoch as u64])));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, chunk) in order.chunks(batch).enumerate() {
            let draws: Vec<u64> = (0..chunk.len())
                .map(|i| derive_seed(seed, &[TRAIN_DRAW, epoch as u64, (b * batch + i) as u64]))
                .collect();
            let (input, labels) = data.batch(&cfg, chunk, &draws)?;
            let step = model.train_step(&input, &labels, &mut opt)?;
            if !step.loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b + 1,
                    lr: hp.learning_rate,
                });
            }
            loss_sum += step.loss * chunk.len() as f64;
            correct += step.predictions.iter().zip(&labels).filter(|(p, l)| p == l).count();
        }
        let val = evaluate(model, data, &plan.val, batch, seed)?;
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            train_acc: correct as f64 / order.len() as f64,
            val_loss: val.loss,
            val_acc: val.accuracy,
        };
        debug!(
            "epoch {epoch}: train loss {:.4} acc {:.3}, val loss {:.4} acc {:.3}",
            rec.train_loss, rec.train_acc, rec.val_loss, rec.val_acc
        );
        if best.as_ref().is_none_or(|(_, acc, _)| rec.val_acc > *acc) {
            if let Some(path) = &opts.checkpoint {
                model.save(path)?;
            }
            best = Some((epoch, rec.val_acc, model.store.clone()));
        }
        let stop = opts.stop_at_train_acc.is_some_and(|t| rec.train_acc >= t)
            || opts.stop_at_val_acc.is_some_and(|t| rec.val_acc >= t);
        epochs.push(rec);
        if stop {
            info!("stopping after epoch {epoch}: target reached");
            break;
        }
    }
    let (best_epoch, best_val_acc, store) = best.ok_or_else(|| Error::InvalidArgument("zero epochs requested".into()))?;
    model.store = store;
    Ok(TrainOutcome {
        epochs,
        best_epoch,
        best_val_acc,
    })
}
