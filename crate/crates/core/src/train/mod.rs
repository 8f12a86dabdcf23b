//! Optimization loop with validation-based model selection.

mod loss;
mod optim;

pub use loss::{loss, metrics, LossKind, MetricAccumulator};
pub use optim::{clip_grad_norm, Adam};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::augment::{Augmenter, MixupConfig, Phase};
use crate::data::WindowDataset;
use crate::error::{Error, Result};
use crate::model::CMambaModel;
use crate::rng::{streams, Rng};
use crate::tensor::{ParamStore, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Halve the learning rate after every epoch.
    Halving,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    /// Global gradient-norm bound; `None` disables clipping.
    pub clip: Option<f64>,
    pub schedule: LrSchedule,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub steps: u64,
    pub augmented_samples: usize,
    /// `(mse, mae)` of the best-validation parameters on the test split.
    pub test: Option<(f64, f64)>,
    /// Seconds spent in [`train`]; not part of [`TrainReport::to_text`].
    pub wall_seconds: f64,
}

impl TrainReport {
    /// `key: value` lines. Floats use the shortest exact representation.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed: {}", self.seed);
        let _ = writeln!(s, "epochs_run: {}", self.epochs.len());
        let _ = writeln!(s, "steps: {}", self.steps);
        let _ = writeln!(s, "augmented_samples: {}", self.augmented_samples);
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "epoch_{}: lr={:?} train_loss={:?} val_loss={:?}",
                e.epoch, e.lr, e.train_loss, e.val_loss
            );
        }
        let _ = writeln!(s, "best_epoch: {}", self.best_epoch);
        let _ = writeln!(s, "best_val_loss: {:?}", self.best_val_loss);
        let _ = writeln!(s, "stopped_early: {}", self.stopped_early);
        match self.test {
            Some((mse, mae)) => {
                let _ = writeln!(s, "test_mse: {mse:?}");
                let _ = writeln!(s, "test_mae: {mae:?}");
            }
            None => {
                let _ = writeln!(s, "test_mse: none");
                let _ = writeln!(s, "test_mae: none");
            }
        }
        s
    }
}

/// The three window sets of one experiment. Empty splits are `None`.
pub struct SplitData {
    pub train: WindowDataset,
    pub val: Option<WindowDataset>,
    pub test: Option<WindowDataset>,
}

/// Mean loss of the model over a dataset, in order and without augmentation.
pub fn evaluate(model: &CMambaModel, store: &ParamStore, data: &WindowDataset, batch_size: usize, kind: LossKind) -> Result<f64> {
    let mut acc = MetricAccumulator::default();
    for batch in data.batches(batch_size, None) {
        let pred = model.predict(store, &batch.x)?;
        acc.add(pred.data(), batch.y.data());
    }
    acc.mean(kind)
}

/// Forecasts for every window in order: `(predictions, targets)`, each `(W, T, V)`.
pub fn predict_dataset(model: &CMambaModel, store: &ParamStore, data: &WindowDataset, batch_size: usize) -> Result<(Tensor, Tensor)> {
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for batch in data.batches(batch_size, None) {
        pred.extend_from_slice(model.predict(store, &batch.x)?.data());
        truth.extend_from_slice(batch.y.data());
    }
    let shape = [data.len(), data.horizon, data.channels];
    Ok((Tensor::new(shape, pred)?, Tensor::new(shape, truth)?))
}

/// One optimizer step on a batch; returns the batch loss.
pub fn train_step(
    model: &CMambaModel,
    store: &mut ParamStore,
    adam: &mut Adam,
    x: &Tensor,
    y: &Tensor,
    cfg: &TrainConfig,
    dropout_rng: Option<&mut Rng>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let pred = model.forward(&mut tape, store, x, dropout_rng)?;
    let l = loss(&mut tape, cfg.loss, pred, y)?;
    let value = tape.value(l).item();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("training loss {value}")));
    }
    tape.backward_into(l, store)?;
    if let Some(c) = cfg.clip {
        clip_grad_norm(store, c);
    }
    adam.step(store)?;
    Ok(value)
}

/// Trains `model` in place and leaves the best-validation parameters in `store`.
pub fn train(
    model: &CMambaModel,
    store: &mut ParamStore,
    data: &SplitData,
    cfg: &TrainConfig,
    mixup: &MixupConfig,
) -> Result<TrainReport> {
    let started = std::time::Instant::now();
    if data.train.is_empty() {
        return Err(Error::Data("training split has no windows".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("epochs and batch_size must be positive".into()));
    }
    let root = Rng::new(cfg.seed);
    let mut shuffle_rng = root.child(streams::SHUFFLE);
    let mut dropout_rng = root.child(streams::DROPOUT);
    let mut augmenter = Augmenter::new(*mixup, root.child(streams::MIXUP))?;
    let use_dropout = model.cfg.dropout > 0.0;

    let mut adam = Adam::new(store, cfg.lr);
    let mut epochs = Vec::new();
    let mut best = (f64::INFINITY, 0usize, store.snapshot());
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (step, mut batch) in data.train.batches(cfg.batch_size, Some(&mut shuffle_rng)).enumerate() {
            if mixup.enabled() {
                augmenter.apply_batch(&mut batch.x, &mut batch.y, Phase::Train)?;
            }
            let drop = use_dropout.then_some(&mut dropout_rng);
            let l = train_step(model, store, &mut adam, &batch.x, &batch.y, cfg, drop)
                .map_err(|e| match e {
                    Error::NonFinite(m) => Error::NonFinite(format!("{m} at epoch {epoch}, step {}", step + 1)),
                    other => other,
                })?;
            sum += l * batch.indices.len() as f64;
            count += batch.indices.len();
        }
        let train_loss = sum / count as f64;
        let val_loss = match &data.val {
            Some(val) => evaluate(model, store, val, cfg.batch_size, cfg.loss)?,
            None => train_loss,
        };
        epochs.push(EpochRecord {
            epoch,
            lr: adam.lr,
            train_loss,
            val_loss,
        });
        if val_loss < best.0 {
            best = (val_loss, epoch, store.snapshot());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = epoch < cfg.epochs;
                break;
            }
        }
        if cfg.schedule == LrSchedule::Halving {
            adam.lr *= 0.5;
        }
    }

    store.restore(&best.2);
    let test = match &data.test {
        Some(test) => {
            let (p, y) = predict_dataset(model, store, test, cfg.batch_size)?;
            Some(metrics(&p, &y)?)
        }
        None => None,
    };
    Ok(TrainReport {
        seed: cfg.seed,
        epochs,
        best_epoch: best.1,
        best_val_loss: best.0,
        stopped_early,
        steps: adam.steps(),
        augmented_samples: augmenter.calls(),
        test,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}
