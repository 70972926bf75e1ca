use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::model::ModelState;

/// Number of snapshots handed to the ensemble.
pub const TOP_K: usize = 8;

/// A deep-copied model snapshot and the validation accuracy that earned it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<S = ModelState<f32>> {
    pub model: S,
    pub epoch: usize,
    pub val_accuracy: f64,
}

/// Keeps a snapshot whenever validation accuracy strictly beats the best so
/// far. Ties never checkpoint. Only the newest `capacity` entries are kept,
/// which are also the most accurate ones.
#[derive(Clone, Debug)]
pub struct CheckpointHarvester<S = ModelState<f32>> {
    best: f64,
    capacity: usize,
    improvements: usize,
    kept: VecDeque<Checkpoint<S>>,
}

impl<S> CheckpointHarvester<S> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity < TOP_K {
            return Err(Error::arg(format!("checkpoint capacity must be at least {TOP_K}")));
        }
        Ok(Self {
            best: f64::NEG_INFINITY,
            capacity,
            improvements: 0,
            kept: VecDeque::with_capacity(capacity),
        })
    }

    /// Records one epoch's accuracy; `snapshot` runs only on improvement.
    /// Returns whether a checkpoint was taken.
    pub fn observe(&mut self, epoch: usize, accuracy: f64, snapshot: impl FnOnce() -> S) -> bool {
        // NaN never counts as an improvement.
        if !(accuracy > self.best) {
            return false;
        }
        self.best = accuracy;
        self.improvements += 1;
        if self.kept.len() == self.capacity {
            self.kept.pop_front();
        }
        self.kept.push_back(Checkpoint {
            model: snapshot(),
            epoch,
            val_accuracy: accuracy,
        });
        true
    }

    pub fn best_accuracy(&self) -> f64 {
        self.best
    }

    pub fn improvements(&self) -> usize {
        self.improvements
    }

    pub fn checkpoints(&self) -> impl Iterator<Item = &Checkpoint<S>> {
        self.kept.iter()
    }

    /// The last (highest-accuracy) `TOP_K` checkpoints, ascending.
    pub fn top(self) -> Vec<Checkpoint<S>> {
        let skip = self.kept.len().saturating_sub(TOP_K);
        self.kept.into_iter().skip(skip).collect()
    }
}
