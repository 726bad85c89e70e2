use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Optimizer, OptimizerKind, Param};
use crate::rng::RngStream;
use crate::tensor::Real;

/// Optimizer settings shared by every trainer. None of these are given by
/// the method description; the defaults are Adam, lr 1e-3, batch 32.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            learning_rate: 1e-3,
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::param("batch size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param(format!("invalid learning rate {}", self.learning_rate)));
        }
        Ok(())
    }

    pub fn optimizer<T: Real>(&self, params: &[&Param<T>]) -> Optimizer<T> {
        let mut opt = Optimizer::new(self.optimizer, self.learning_rate);
        opt.init(params);
        opt
    }
}

/// Writes `epoch,loss` rows, one per epoch.
pub fn write_loss_csv(path: impl AsRef<Path>, history: &[f64]) -> Result<()> {
    let mut out = String::from("epoch,loss\n");
    for (epoch, loss) in history.iter().enumerate() {
        writeln!(out, "{},{loss:.9}", epoch + 1).unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

/// Shuffled minibatches of `0..n`. With `min_batch = 2` a trailing batch of
/// one is folded into the previous batch (batch-norm cannot train on it).
pub(crate) fn minibatches(n: usize, batch: usize, min_batch: usize, rng: &mut RngStream) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < min_batch) {
        let tail = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(tail);
    }
    batches
}
