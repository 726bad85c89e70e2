//! Softmax classifiers over fixed features: an MLP and a linear probe.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{softmax_cross_entropy, softmax_rows, Linear, Module, OptimizerKind, Param, Relu};
use crate::rng::RngStream;
use crate::tensor::Tensor;
use crate::training::{minibatches, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: vec![256, 128],
            epochs: 500,
            learning_rate: 1e-3,
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl ClassifierConfig {
    pub fn linear() -> Self {
        ClassifierConfig {
            hidden: Vec::new(),
            ..ClassifierConfig::default()
        }
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
        }
    }
}

/// Feature standardization followed by `Linear (-> ReLU -> Linear)*`.
#[derive(Clone, Debug)]
pub struct Classifier {
    mean: Vec<f32>,
    std: Vec<f32>,
    layers: Vec<Linear>,
    relus: Vec<Relu>,
}

impl Classifier {
    pub fn new(inputs: usize, hidden: &[usize], classes: usize, rng: &mut RngStream) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut width = inputs;
        for &h in hidden.iter().chain(std::iter::once(&classes)) {
            layers.push(Linear::new(width, h, rng));
            width = h;
        }
        Classifier {
            mean: vec![0.0; inputs],
            std: vec![1.0; inputs],
            relus: vec![Relu::new(); hidden.len()],
            layers,
        }
    }

    fn fit_standardization(&mut self, x: &Tensor) {
        let [n, d] = *x.dims() else { return };
        for j in 0..d {
            let col = (0..n).map(|i| x.row(i)[j] as f64);
            let mean = col.clone().sum::<f64>() / n as f64;
            let var = col.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            self.mean[j] = mean as f32;
            self.std[j] = if var > 1e-12 { var.sqrt() as f32 } else { 1.0 };
        }
    }

    fn standardize(&self, x: &Tensor) -> Result<Tensor> {
        let d = self.mean.len();
        if x.dims().len() != 2 || x.dims()[1] != d {
            return Err(Error::shape(format!("classifier expects [N, {d}], got {:?}", x.dims())));
        }
        let mut out = x.clone();
        for row in out.data_mut().chunks_exact_mut(d) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        Ok(out)
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.standardize(x)?;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h)?;
            if i + 1 < self.layers.len() {
                h = crate::nn::relu(&h);
            }
        }
        Ok(h)
    }

    pub fn probabilities(&self, x: &Tensor) -> Result<Tensor> {
        softmax_rows(&self.logits(x)?)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(x)?))
    }

    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let n = self.layers.len();
        let mut h = x.clone();
        for i in 0..n {
            h = self.layers[i].forward(&h)?;
            if i + 1 < n {
                h = self.relus[i].forward(&h);
            }
        }
        Ok(h)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<()> {
        let mut g = grad.clone();
        for i in (0..self.layers.len()).rev() {
            if i < self.relus.len() {
                g = self.relus[i].backward(&g)?;
            }
            g = self.layers[i].backward(&g)?;
        }
        Ok(())
    }
}

impl Module<f32> for Classifier {
    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

/// Row-wise argmax; ties keep the lowest index.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let n = t.dims()[0];
    (0..n)
        .map(|i| {
            let row = t.row(i);
            (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best })
        })
        .collect()
}

pub(crate) fn check_labels(x: &Tensor, labels: &[usize], classes: usize) -> Result<usize> {
    let n = match x.dims() {
        [n, _] => *n,
        d => return Err(Error::shape(format!("expected [N, d] features, got {d:?}"))),
    };
    if n == 0 {
        return Err(Error::param("no training samples"));
    }
    if labels.len() != n {
        return Err(Error::shape(format!("{n} rows but {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::param(format!("label {bad} outside {classes} classes")));
    }
    Ok(n)
}

pub(crate) fn gather(t: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let w = t.dims()[1];
    let mut data = Vec::with_capacity(idx.len() * w);
    idx.iter().for_each(|&i| data.extend_from_slice(t.row(i)));
    Tensor::from_vec(&[idx.len(), w], data)
}

/// Trains with softmax cross-entropy; returns the model and per-epoch loss.
pub fn train_classifier(
    x: &Tensor,
    labels: &[usize],
    classes: usize,
    config: &ClassifierConfig,
    rng: &mut RngStream,
) -> Result<(Classifier, Vec<f64>)> {
    let n = check_labels(x, labels, classes)?;
    let train = config.train_config();
    train.validate()?;
    let mut model = Classifier::new(x.dims()[1], &config.hidden, classes, &mut rng.fork(0xC1));
    model.fit_standardization(x);
    let xs = model.standardize(x)?;
    let mut opt = train.optimizer(&model.params());
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let mut total = 0.0;
        for batch in minibatches(n, config.batch_size, 1, rng) {
            let xb = gather(&xs, &batch)?;
            let yb: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let logits = model.forward(&xb)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &yb)?;
            model.backward(&grad)?;
            opt.step(model.params_mut())?;
            total += loss as f64 * batch.len() as f64;
        }
        history.push(total / n as f64);
    }
    Ok((model, history))
}

pub fn mlp_classify(
    train: &Tensor,
    labels: &[usize],
    test: &Tensor,
    classes: usize,
    config: &ClassifierConfig,
    rng: &mut RngStream,
) -> Result<Vec<usize>> {
    train_classifier(train, labels, classes, config, rng)?.0.predict(test)
}

/// A single linear layer under the same training loop.
pub fn linear_probe(
    train: &Tensor,
    labels: &[usize],
    test: &Tensor,
    classes: usize,
    config: &ClassifierConfig,
    rng: &mut RngStream,
) -> Result<Vec<usize>> {
    let config = ClassifierConfig {
        hidden: Vec::new(),
        ..config.clone()
    };
    mlp_classify(train, labels, test, classes, &config, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> ClassifierConfig {
        ClassifierConfig {
            hidden: vec![32, 16],
            epochs: 200,
            learning_rate: 1e-2,
            batch_size: 10,
            ..ClassifierConfig::default()
        }
    }

    #[test]
    fn memorizes_ten_points() {
        let x = Tensor::from_fn(&[10, 10], |i| if i / 10 == i % 10 { 1.0 } else { 0.0 });
        let y: Vec<usize> = (0..10).collect();
        let pred = mlp_classify(&x, &y, &x, 10, &quick(), &mut RngStream::new(0)).unwrap();
        assert_eq!(pred, y);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let x = Tensor::from_fn(&[6, 3], |i| (i as f32).sin() * 4.0);
        let (model, _) = train_classifier(&x, &[0, 1, 2, 0, 1, 2], 3, &quick(), &mut RngStream::new(1)).unwrap();
        let p = model.probabilities(&x).unwrap();
        for i in 0..6 {
            assert!((p.row(i).iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn linear_probe_separates_two_classes() {
        let x = Tensor::from_fn(&[20, 2], |i| {
            let r = i / 2;
            let sign = if r < 10 { -1.0 } else { 1.0 };
            if i % 2 == 0 {
                sign * (1.0 + r as f32 * 0.1)
            } else {
                (r as f32 * 0.37).cos()
            }
        });
        let y: Vec<usize> = (0..20).map(|r| usize::from(r >= 10)).collect();
        let pred = linear_probe(&x, &y, &x, 2, &quick(), &mut RngStream::new(2)).unwrap();
        assert_eq!(pred, y);
    }

    #[test]
    fn seeded_runs_agree() {
        let x = Tensor::from_fn(&[12, 4], |i| ((i * 13) % 7) as f32);
        let y: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let cfg = ClassifierConfig { epochs: 5, ..quick() };
        let a = mlp_classify(&x, &y, &x, 3, &cfg, &mut RngStream::new(3)).unwrap();
        let b = mlp_classify(&x, &y, &x, 3, &cfg, &mut RngStream::new(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_inputs() {
        let x = Tensor::zeros(&[2, 2]);
        assert!(matches!(
            mlp_classify(&x, &[0, 5], &x, 3, &quick(), &mut RngStream::new(0)),
            Err(Error::Param(_))
        ));
        let empty = Tensor::zeros(&[0, 2]);
        assert!(matches!(
            mlp_classify(&empty, &[], &x, 3, &quick(), &mut RngStream::new(0)),
            Err(Error::Param(_))
        ));
    }
}
