//! Mini-batch training with early stopping on validation loss.

use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::head::{mae_loss, Adam};
use super::{Model, TrainConfig, OUTPUT_DIM};
use crate::datakit::SampleRecord;
use crate::imaging::load_gray;
use crate::{Error, Result};

/// Backbone features paired with targets. The backbone is frozen, so features
/// are computed once and reused every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub features: Array2<f64>,
    pub targets: Array2<f64>,
}

impl Samples {
    pub fn new(features: Array2<f64>, targets: Array2<f64>) -> Result<Self> {
        if features.nrows() != targets.nrows() {
            return Err(Error::InvalidInput(format!(
                "{} feature rows but {} target rows",
                features.nrows(),
                targets.nrows()
            )));
        }
        if targets.ncols() != OUTPUT_DIM {
            return Err(Error::InvalidInput(format!("targets must have {OUTPUT_DIM} columns")));
        }
        Ok(Self { features, targets })
    }

    /// Loads, preprocesses and featurises the images of `records`.
    pub fn from_records(model: &Model, root: &Path, records: &[&SampleRecord]) -> Result<Self> {
        let inputs = records
            .par_iter()
            .map(|r| model.prepare(&load_gray(&root.join(&r.image_path))?))
            .collect::<Result<Vec<_>>>()?;
        Self::new(model.features(&inputs), targets_of(records))
    }

    pub fn len(&self) -> usize {
        self.targets.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), rows),
            targets: self.targets.select(Axis(0), rows),
        }
    }
}

/// Ground-truth matrix, one row per record in measurement order.
pub fn targets_of(records: &[&SampleRecord]) -> Array2<f64> {
    let mut t = Array2::zeros((records.len(), OUTPUT_DIM));
    for (mut row, r) in t.rows_mut().into_iter().zip(records) {
        row.assign(&ndarray::ArrayView1::from(&r.measurements.to_vector()));
    }
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_mae: f64,
    pub val_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub stopped_early: bool,
    /// Training MAE of the model as passed in, before any update.
    pub initial_train_mae: f64,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_mae,val_mae\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{}\n", e.epoch, e.train_mae, e.val_mae));
        }
        s
    }

    pub fn final_train_mae(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_mae)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops after `patience` epochs without a strict improvement of the monitored loss.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::INFINITY, best_epoch: 0, wait: 0 }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.wait = 0;
            return StopDecision::Improved;
        }
        self.wait += 1;
        if self.wait >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best(&self) -> (usize, f64) {
        (self.best_epoch, self.best)
    }
}

/// One optimiser step on a batch; returns the batch loss before the update.
pub fn train_step(model: &mut Model, optimizer: &mut Adam, features: &Array2<f64>, targets: &Array2<f64>) -> Result<f64> {
    if features.nrows() == 0 || features.nrows() != targets.nrows() {
        return Err(Error::InvalidInput("batch must be nonempty with matching targets".into()));
    }
    let (pred, cache) = model.head.forward_train(features);
    let (loss, grad) = mae_loss(&pred, targets);
    let grads = model.head.backward(&cache, &grad);
    optimizer.update(model.head.trainable_mut(), &grads);
    Ok(loss)
}

/// Trains on `train`, monitoring MAE on `val`; returns the best-validation weights.
pub fn train_model(model: Model, train: &Samples, val: &Samples, cfg: &TrainConfig) -> Result<(Model, History)> {
    if val.is_empty() {
        return Err(Error::State("validation set is empty".into()));
    }
    train_with_validator(model, train, cfg, |m, _| {
        let pred = m.predict_features(&val.features)?;
        Ok(mae_loss(&pred, &val.targets).0)
    })
}

/// Training loop with a caller-supplied validation loss, evaluated after each epoch.
pub fn train_with_validator<F>(mut model: Model, train: &Samples, cfg: &TrainConfig, mut validate: F) -> Result<(Model, History)>
where
    F: FnMut(&Model, usize) -> Result<f64>,
{
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::State("training set is empty".into()));
    }
    let initial_train_mae = mae_loss(&model.predict_features(&train.features)?, &train.targets).0;
    if cfg.init_output_bias {
        let mean = train.targets.mean_axis(Axis(0)).expect("nonempty");
        model.head.output.bias.assign(&mean);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = Adam::new(cfg.adam());
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_head = model.head.clone();
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train.select(chunk);
            let loss = train_step(&mut model, &mut optimizer, &batch.features, &batch.targets)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            total += loss * chunk.len() as f64;
        }
        let train_mae = total / train.len() as f64;
        let val_mae = validate(&model, epoch)?;
        if !val_mae.is_finite() {
            return Err(Error::Divergence { epoch, loss: val_mae });
        }
        epochs.push(EpochRecord { epoch, train_mae, val_mae });
        match stopper.observe(epoch, val_mae) {
            StopDecision::Improved => best_head = model.head.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }

    model.head = best_head;
    let (best_epoch, best_val_mae) = stopper.best();
    Ok((
        model,
        History { epochs, best_epoch, best_val_mae, stopped_early, initial_train_mae },
    ))
}
