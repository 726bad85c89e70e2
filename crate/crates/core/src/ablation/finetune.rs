//! A classifier head on the frozen alignment backbone, and the
//! train-everything-from-scratch comparison run.

use serde::{Deserialize, Serialize};

use super::classify::{argmax_rows, check_labels, gather};
use crate::alignment::{AlignmentModel, AlignmentSpec};
use crate::error::{Error, Result};
use crate::nn::{mse_loss_grad, softmax_cross_entropy, Linear, Mode, Module, OptimizerKind};
use crate::rng::RngStream;
use crate::tensor::{Real, Tensor};
use crate::training::{minibatches, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadLoss {
    /// Squared error against one-hot targets.
    Mse,
    CrossEntropy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub loss: HeadLoss,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            epochs: 20,
            learning_rate: 1e-3,
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
            loss: HeadLoss::Mse,
        }
    }
}

impl FinetuneConfig {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
        }
    }
}

pub fn one_hot<T: Real>(labels: &[usize], classes: usize) -> Tensor<T> {
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    for (i, &l) in labels.iter().enumerate() {
        t.data_mut()[i * classes + l] = T::one();
    }
    t
}

/// Loss of `head` on `features`, with gradients accumulated into the head.
pub fn head_loss<T: Real>(head: &mut Linear<T>, features: &Tensor<T>, labels: &[usize], loss: HeadLoss) -> Result<T> {
    let logits = head.forward(features)?;
    let (value, grad) = match loss {
        HeadLoss::Mse => mse_loss_grad(&logits, &one_hot(labels, head.out_features()))?,
        HeadLoss::CrossEntropy => softmax_cross_entropy(&logits, labels)?,
    };
    head.backward(&grad)?;
    Ok(value)
}

#[derive(Clone, Debug)]
pub struct FinetuneHead {
    pub linear: Linear,
    /// Optimizer steps taken while training.
    pub steps: u64,
}

impl FinetuneHead {
    pub fn predict(&self, backbone: &AlignmentModel, latents: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.linear.apply(&backbone.features(latents)?)?))
    }
}

/// Trains `W_cls`, `b_cls` on the backbone's block-3 activations. The
/// backbone must already be frozen and is only read.
pub fn finetune_head(
    latents: &Tensor,
    labels: &[usize],
    classes: usize,
    backbone: &AlignmentModel,
    config: &FinetuneConfig,
    rng: &mut RngStream,
) -> Result<(FinetuneHead, Vec<f64>)> {
    if !backbone.is_frozen() {
        return Err(Error::state("finetuning needs a frozen backbone"));
    }
    let n = check_labels(latents, labels, classes)?;
    let train = config.train_config();
    train.validate()?;
    let features = backbone.features(latents)?;
    let mut linear = Linear::new(features.dims()[1], classes, &mut rng.fork(0xF7));
    let mut opt = train.optimizer(&linear.params());
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let mut total = 0.0;
        for batch in minibatches(n, config.batch_size, 1, rng) {
            let fb = gather(&features, &batch)?;
            let yb: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            total += head_loss(&mut linear, &fb, &yb, config.loss)? as f64 * batch.len() as f64;
            opt.step(linear.params_mut())?;
        }
        history.push(total / n as f64);
    }
    let steps = opt.steps_taken();
    Ok((FinetuneHead { linear, steps }, history))
}

/// A fresh network shaped like the backbone plus head, every parameter
/// trained from random initialization for exactly `steps` optimizer steps.
pub fn retrain_classifier(
    latents: &Tensor,
    labels: &[usize],
    classes: usize,
    spec: &AlignmentSpec,
    config: &FinetuneConfig,
    steps: u64,
    rng: &mut RngStream,
) -> Result<AlignmentModel> {
    let n = check_labels(latents, labels, classes)?;
    if n < 2 {
        return Err(Error::BatchSize(n));
    }
    let train = config.train_config();
    train.validate()?;
    let spec = AlignmentSpec {
        output_dim: classes,
        ..spec.clone()
    };
    let mut model = AlignmentModel::new(spec, &mut rng.fork(0x2E))?;
    let mut opt = train.optimizer(&model.params());
    let mut drop_rng = rng.fork(0xD1);
    while opt.steps_taken() < steps {
        for batch in minibatches(n, config.batch_size, 2, rng) {
            if opt.steps_taken() >= steps {
                break;
            }
            let xb = gather(latents, &batch)?;
            let yb: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let logits = model.forward(&xb, Mode::Train, &mut drop_rng)?;
            let (_, grad) = match config.loss {
                HeadLoss::Mse => mse_loss_grad(&logits, &one_hot(&yb, classes))?,
                HeadLoss::CrossEntropy => softmax_cross_entropy(&logits, &yb)?,
            };
            model.backward(&grad)?;
            opt.step(model.params_mut())?;
        }
    }
    model.freeze();
    Ok(model)
}

pub fn predict_retrained(model: &AlignmentModel, latents: &Tensor) -> Result<Vec<usize>> {
    Ok(argmax_rows(&model.apply(latents)?))
}
