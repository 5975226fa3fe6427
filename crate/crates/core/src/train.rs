//! Mini-batch fitting with one-cycle, discriminative Adam updates.

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::data::{batch_iter, tta_views, AugmentPolicy, ImageSource, LabelVocabulary, ManifestRecord, Mode, Pixels};
use crate::error::{Error, Result};
use crate::evaluation::ScoreMatrix;
use crate::model::Model;
use crate::ops::sigmoid_scalar;
use crate::optim::{adam_step, group_scaled_lrs, AdamConfig, AdamState, GroupLrPolicy};
use crate::rng::{self, Rng};
use crate::schedule::ScheduleConfig;

/// Substream tag for test-time augmentation draws, disjoint from epoch numbers.
const TTA_STREAM: u64 = u64::MAX - 1;
const EVAL_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// `iters` is ignored; it is derived from the epoch and batch counts.
    pub schedule: ScheduleConfig,
    pub groups: GroupLrPolicy,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Where `best.ckpt` and `final.ckpt` go; `None` keeps training in memory.
    pub checkpoint_dir: Option<PathBuf>,
    /// Stop at the first non-finite loss and report instead of failing.
    pub nan_guard: bool,
    pub skip_unreadable: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 12,
            batch_size: 64,
            schedule: ScheduleConfig::default(),
            groups: GroupLrPolicy::default(),
            adam: AdamConfig::default(),
            seed: 0,
            checkpoint_dir: None,
            nan_guard: true,
            skip_unreadable: false,
        }
    }
}

impl TrainConfig {
    /// Total optimizer steps: `epochs · ceil(n_train / batch_size)`.
    pub fn total_steps(&self, n_train: usize) -> usize {
        self.epochs * n_train.div_ceil(self.batch_size.max(1))
    }

    /// The schedule with `iters` set from the training-set size.
    pub fn resolved_schedule(&self, n_train: usize) -> ScheduleConfig {
        ScheduleConfig { iters: self.total_steps(n_train), ..self.schedule.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        self.groups.validate()
    }
}

/// Per-epoch losses and the learning-rate trace of one fit.
///
/// Wall time is kept out of the serialized form so reruns give identical files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub epochs_completed: usize,
    pub steps: usize,
    pub train_loss: Vec<f64>,
    pub valid_loss: Vec<f64>,
    /// 0-based epoch with the lowest validation loss.
    pub best_epoch: Option<usize>,
    /// Base learning rate used at each step (group 3's rate).
    pub lr_trace: Vec<f64>,
    pub aborted: Option<String>,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl FitReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Trains `model` in place.
///
/// A non-finite loss or gradient with `nan_guard` set stops training, leaving
/// the last completed epoch's checkpoints on disk and `aborted` filled in.
#[allow(clippy::too_many_arguments)]
pub fn fit(
    model: &mut Model,
    train: &[ManifestRecord],
    valid: &[ManifestRecord],
    vocab: &LabelVocabulary,
    policy: &AugmentPolicy,
    source: &dyn ImageSource,
    cfg: &TrainConfig,
) -> Result<FitReport> {
    let started = Instant::now();
    cfg.validate()?;
    if model.num_outputs() != vocab.len() {
        return Err(Error::config(format!(
            "model head has {} outputs but the vocabulary has {} labels",
            model.num_outputs(),
            vocab.len()
        )));
    }
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Validation("training and validation sets must be non-empty".into()));
    }
    let schedule = cfg.resolved_schedule(train.len());
    schedule.validate()?;
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }

    let groups: Vec<usize> = model.params().iter().map(|p| p.group.index()).collect();
    let mut state = AdamState::new(&model.param_values(), cfg.adam);
    let mut report = FitReport {
        epochs_completed: 0,
        steps: 0,
        train_loss: Vec::new(),
        valid_loss: Vec::new(),
        best_epoch: None,
        lr_trace: Vec::with_capacity(schedule.iters),
        aborted: None,
        wall_time_secs: 0.0,
    };

    'epochs: for epoch in 0..cfg.epochs {
        let batches = batch_iter(train, vocab, policy, source, cfg.batch_size, cfg.seed, epoch as u64, Mode::Train)?
            .skip_unreadable(cfg.skip_unreadable);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for batch in batches {
            let batch = batch?;
            let base = schedule.lr(report.steps)?;
            let lrs3 = group_scaled_lrs(base, &cfg.groups);
            let lrs: Vec<f64> = groups.iter().map(|&g| lrs3[g]).collect();
            let (loss, grads) = model.loss_and_grad(&batch.images, &batch.targets)?;
            if !loss.is_finite() && cfg.nan_guard {
                report.aborted = Some(format!("non-finite loss {loss} at step {}", report.steps));
                break 'epochs;
            }
            let mut params: Vec<_> = model.params_mut().collect();
            match adam_step(&mut params, &grads, &mut state, &lrs) {
                Err(Error::NonFinite(msg)) if cfg.nan_guard => {
                    report.aborted = Some(format!("step {}: {msg}", report.steps));
                    break 'epochs;
                }
                r => r?,
            }
            report.lr_trace.push(base);
            report.steps += 1;
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
        }
        if seen == 0 {
            return Err(Error::Validation(format!("epoch {epoch} produced no readable images")));
        }
        let train_loss = loss_sum / seen as f64;
        let valid_loss = validate(model, valid, vocab, policy, source)?;
        if !valid_loss.is_finite() && cfg.nan_guard {
            report.aborted = Some(format!("non-finite validation loss after epoch {epoch}"));
            break;
        }
        log::info!("epoch {}/{}: train {train_loss:.5} valid {valid_loss:.5}", epoch + 1, cfg.epochs);
        let improved = report.best_epoch.is_none_or(|b| valid_loss < report.valid_loss[b]);
        report.train_loss.push(train_loss);
        report.valid_loss.push(valid_loss);
        report.epochs_completed = epoch + 1;
        if improved {
            report.best_epoch = Some(epoch);
        }
        if let Some(dir) = &cfg.checkpoint_dir {
            if improved {
                save_checkpoint(model, Some(vocab), &dir.join("best.ckpt"))?;
            }
            save_checkpoint(model, Some(vocab), &dir.join("final.ckpt"))?;
        }
    }
    if let Some(msg) = &report.aborted {
        log::warn!("training aborted: {msg}");
    }
    report.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

/// Mean per-sample summed BCE under evaluation preprocessing.
pub fn validate(
    model: &Model,
    records: &[ManifestRecord],
    vocab: &LabelVocabulary,
    policy: &AugmentPolicy,
    source: &dyn ImageSource,
) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for batch in batch_iter(records, vocab, policy, source, EVAL_BATCH, 0, 0, Mode::Eval)? {
        let batch = batch?;
        total += model.loss(&batch.images, &batch.targets)? * batch.len() as f64;
        n += batch.len();
    }
    Ok(total / n as f64)
}

/// Mean sigmoid probabilities over `n` augmented views of `image`.
pub fn predict_tta(model: &Model, image: &Pixels, policy: &AugmentPolicy, n: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    let views = tta_views(image, policy, n, rng)?;
    let mut mean = vec![0.0; model.num_outputs()];
    for view in &views {
        for (m, z) in mean.iter_mut().zip(model.logits(view)?) {
            *m += sigmoid_scalar(z);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    Ok(mean)
}

/// TTA probabilities for every record, each drawn from its own substream of `seed`.
pub fn predict_records(
    model: &Model,
    records: &[ManifestRecord],
    source: &dyn ImageSource,
    policy: &AugmentPolicy,
    n: usize,
    seed: u64,
) -> Result<ScoreMatrix> {
    let rows: Vec<Vec<f64>> = records
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let px = source.load(rec)?;
            predict_tta(model, &px, policy, n, &mut rng::substream(seed, TTA_STREAM, i as u64))
        })
        .collect::<Result<_>>()?;
    ScoreMatrix::new(records.len(), model.num_outputs(), rows.concat())
}
