//! Training schedule: plateau-triggered learning-rate reduction with
//! stop-on-second-plateau, plus the per-epoch history record.
//!
//! The monitored quantity is validation accuracy (higher is better). When it
//! fails to improve for `plateau_patience` consecutive epochs the learning
//! rate is multiplied once by `plateau_factor`; a second such plateau ends
//! training.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{NnError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub plateau_patience: usize,
    /// Multiplier applied to the learning rate on a plateau.
    pub plateau_factor: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            max_epochs: 150,
            batch_size: 24,
            initial_lr: 1e-3,
            plateau_patience: 10,
            plateau_factor: 0.01,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs < 1 {
            return Err(NnError::InvalidConfig("max_epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(NnError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.plateau_patience < 1 {
            return Err(NnError::InvalidConfig("plateau_patience must be at least 1".into()));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(NnError::InvalidConfig("plateau_factor must lie in (0, 1)".into()));
        }
        if self.initial_lr <= 0.0 {
            return Err(NnError::InvalidConfig("initial_lr must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleAction {
    Continue,
    /// Plateau hit for the first time; train on with the reduced rate.
    ReduceLr { new_lr: f64 },
    /// Second plateau; stop training.
    Stop,
}

/// State machine driving the plateau schedule across epochs.
#[derive(Debug, Clone)]
pub struct PlateauDriver {
    patience: usize,
    factor: f64,
    lr: f64,
    best: Option<f64>,
    best_epoch: usize,
    wait: usize,
    reduced: bool,
}

impl PlateauDriver {
    pub fn new(schedule: &TrainSchedule) -> Self {
        PlateauDriver {
            patience: schedule.plateau_patience,
            factor: schedule.plateau_factor,
            lr: schedule.initial_lr,
            best: None,
            best_epoch: 0,
            wait: 0,
            reduced: false,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best.map(|v| (self.best_epoch, v))
    }

    /// Record the epoch's monitored value. Returns whether it improved on the
    /// best so far, and what to do next.
    pub fn observe(&mut self, epoch: usize, value: f64) -> (bool, ScheduleAction) {
        let improved = self.best.is_none_or(|b| value > b);
        if improved {
            self.best = Some(value);
            self.best_epoch = epoch;
            self.wait = 0;
            return (true, ScheduleAction::Continue);
        }
        self.wait += 1;
        if self.wait < self.patience {
            return (false, ScheduleAction::Continue);
        }
        if self.reduced {
            return (false, ScheduleAction::Stop);
        }
        self.reduced = true;
        self.wait = 0;
        self.lr *= self.factor;
        (false, ScheduleAction::ReduceLr { new_lr: self.lr })
    }
}

/// One epoch's curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub fn push(&mut self, record: EpochRecord) {
        self.epochs.push(record);
    }

    pub fn max_val_acc(&self) -> Option<f64> {
        self.epochs.iter().map(|e| e.val_acc).fold(None, |acc, v| {
            Some(acc.map_or(v, |a: f64| a.max(v)))
        })
    }

    /// Learning rate never increases, and every strict decrease multiplies by
    /// exactly `factor` (within floating-point tolerance).
    pub fn check_lr_monotone(&self, factor: f64) -> bool {
        self.epochs.windows(2).all(|w| {
            let (prev, next) = (w[0].lr, w[1].lr);
            next <= prev && (next == prev || (next / prev - factor).abs() < 1e-12)
        })
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("epoch,train_loss,val_loss,train_acc,val_acc,lr\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.epoch, e.train_loss, e.val_loss, e.train_acc, e.val_acc, e.lr
            ));
        }
        dermpipe_core::fsutil::write_atomic(path, out.as_bytes())?;
        Ok(())
    }
}
