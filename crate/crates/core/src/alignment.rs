//! Latent-to-embedding alignment network.
//!
//! Three blocks of `Linear -> BatchNorm1d -> ReLU -> Dropout` with widths
//! 512, 1024 and 2048, then a linear projection into the embedding space.
//! The block-3 activation (`d_3`, width 2048) is exposed through
//! [`AlignmentModel::features`] for the fine-tuning head.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autoencoder::LatentRow;
use crate::checkpoint::{load_param, param_checksum, read_descriptor, read_tensor, write_checkpoint};
use crate::dataset::EmbeddingTable;
use crate::error::{Error, Result};
use crate::nn::{mse_loss_grad, BatchNorm1d, Dropout, Linear, Mode, Module, Param, Relu};
use crate::rng::RngStream;
use crate::tensor::{Real, Tensor};
use crate::training::{minibatches, TrainConfig};

pub const HIDDEN_WIDTHS: [usize; 3] = [512, 1024, 2048];
pub const DROPOUT_RATE: f64 = 0.3;
pub const FULL_EMBEDDING_DIM: usize = 3584;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub dropout: f64,
}

impl Default for AlignmentSpec {
    fn default() -> Self {
        AlignmentSpec {
            input_dim: crate::autoencoder::DEFAULT_LATENT_DIM,
            hidden: HIDDEN_WIDTHS.to_vec(),
            output_dim: FULL_EMBEDDING_DIM,
            dropout: DROPOUT_RATE,
        }
    }
}

impl AlignmentSpec {
    pub fn new(input_dim: usize, output_dim: usize) -> Self {
        AlignmentSpec {
            input_dim,
            output_dim,
            ..AlignmentSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::param(format!("degenerate alignment widths {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::param(format!("dropout rate {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        *self.hidden.last().unwrap_or(&self.input_dim)
    }
}

#[derive(Clone, Debug)]
pub struct Block<T: Real = f32> {
    pub linear: Linear<T>,
    pub norm: BatchNorm1d<T>,
    relu: Relu,
    dropout: Dropout,
}

impl<T: Real> Block<T> {
    fn new(input: usize, output: usize, rate: f64, rng: &mut RngStream) -> Result<Self> {
        Ok(Block {
            linear: Linear::new(input, output, rng),
            norm: BatchNorm1d::new(output),
            relu: Relu::new(),
            dropout: Dropout::new(rate)?,
        })
    }

    fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(crate::nn::relu(&self.norm.apply(&self.linear.apply(x)?)?))
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode, rng: &mut RngStream) -> Result<Tensor<T>> {
        let h = self.linear.forward(x)?;
        let h = self.norm.forward(&h, mode)?;
        let h = self.relu.forward(&h);
        self.dropout.forward(&h, mode, rng)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.dropout.backward(grad)?;
        let g = self.relu.backward(&g)?;
        let g = self.norm.backward(&g)?;
        self.linear.backward(&g)
    }
}

#[derive(Clone, Debug)]
pub struct AlignmentModel<T: Real = f32> {
    spec: AlignmentSpec,
    pub blocks: Vec<Block<T>>,
    pub output: Linear<T>,
    frozen: bool,
}

impl<T: Real> AlignmentModel<T> {
    pub fn new(spec: AlignmentSpec, rng: &mut RngStream) -> Result<Self> {
        spec.validate()?;
        let mut blocks = Vec::with_capacity(spec.hidden.len());
        let mut width = spec.input_dim;
        for &h in &spec.hidden {
            blocks.push(Block::new(width, h, spec.dropout, rng)?);
            width = h;
        }
        let output = Linear::new(width, spec.output_dim, rng);
        Ok(AlignmentModel {
            spec,
            blocks,
            output,
            frozen: false,
        })
    }

    pub fn spec(&self) -> &AlignmentSpec {
        &self.spec
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        match x.dims() {
            [_, d] if *d == self.spec.input_dim => Ok(()),
            d => Err(Error::shape(format!(
                "alignment expects [B, {}], got {d:?}",
                self.spec.input_dim
            ))),
        }
    }

    /// Eval-mode block-3 activations, `[B, input_dim] -> [B, 2048]`.
    pub fn features(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for block in &self.blocks {
            h = block.apply(&h)?;
        }
        Ok(h)
    }

    /// Eval-mode prediction `[B, input_dim] -> [B, output_dim]`.
    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.output.apply(&self.features(x)?)
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, rng: &mut RngStream) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for block in &mut self.blocks {
            h = block.forward(&h, mode, rng)?;
        }
        self.output.forward(&h)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = self.output.backward(grad)?;
        for block in self.blocks.iter_mut().rev() {
            g = block.backward(&g)?;
        }
        Ok(g)
    }
}

impl<T: Real> Module<T> for AlignmentModel<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v: Vec<&Param<T>> = Vec::new();
        for b in &self.blocks {
            v.extend(b.linear.params());
            v.extend(b.norm.params());
        }
        v.extend(self.output.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v: Vec<&mut Param<T>> = Vec::new();
        for b in &mut self.blocks {
            v.extend(b.linear.params_mut());
            v.extend(b.norm.params_mut());
        }
        v.extend(self.output.params_mut());
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct AlignmentDescriptor {
    kind: String,
    spec: AlignmentSpec,
    frozen: bool,
    params: Vec<String>,
    train: Option<TrainConfig>,
}

fn param_names(blocks: usize) -> Vec<String> {
    let mut names = Vec::new();
    for i in 1..=blocks {
        for p in ["linear.weight", "linear.bias", "norm.weight", "norm.bias"] {
            names.push(format!("block{i}.{p}"));
        }
    }
    names.push("output.weight".into());
    names.push("output.bias".into());
    names
}

impl AlignmentModel<f32> {
    /// Checksum over every parameter and batch-norm buffer.
    pub fn checksum(&self) -> u64 {
        let buffers: Vec<Param> = self
            .blocks
            .iter()
            .flat_map(|b| {
                [
                    Param::new(b.norm.running_mean.clone()),
                    Param::new(b.norm.running_var.clone()),
                ]
            })
            .collect();
        param_checksum(self.params().into_iter().chain(&buffers))
    }

    pub fn save(&self, dir: impl AsRef<Path>, train: Option<&TrainConfig>) -> Result<()> {
        let mut tensors: Vec<(String, &Tensor)> = param_names(self.blocks.len())
            .into_iter()
            .zip(self.params().into_iter().map(|p| &p.value))
            .collect();
        for (i, b) in self.blocks.iter().enumerate() {
            tensors.push((format!("block{}.norm.running_mean", i + 1), &b.norm.running_mean));
            tensors.push((format!("block{}.norm.running_var", i + 1), &b.norm.running_var));
        }
        let descriptor = AlignmentDescriptor {
            kind: "alignment".into(),
            spec: self.spec.clone(),
            frozen: self.frozen,
            params: tensors.iter().map(|(n, _)| n.clone()).collect(),
            train: train.cloned(),
        };
        write_checkpoint(dir, &descriptor, &tensors)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let desc: AlignmentDescriptor = read_descriptor(dir)?;
        if desc.kind != "alignment" {
            return Err(Error::load(
                dir,
                format!("checkpoint kind {:?} is not an alignment model", desc.kind),
            ));
        }
        let mut model = AlignmentModel::new(desc.spec, &mut RngStream::new(0))?;
        let names = param_names(model.blocks.len());
        for (name, p) in names.iter().zip(model.params_mut()) {
            load_param(dir, name, p)?;
        }
        for (i, b) in model.blocks.iter_mut().enumerate() {
            let f = b.norm.features();
            b.norm.running_mean = read_tensor(dir, &format!("block{}.norm.running_mean", i + 1), &[f])?;
            b.norm.running_var = read_tensor(dir, &format!("block{}.norm.running_var", i + 1), &[f])?;
        }
        model.frozen = desc.frozen;
        Ok(model)
    }
}

/// Stacks latents into `[N, d]` and their tokens' embedding rows into
/// `[N, E]`.
pub fn alignment_pairs(rows: &[LatentRow], table: &EmbeddingTable) -> Result<(Tensor, Tensor)> {
    if rows.is_empty() {
        return Err(Error::param("no latent rows"));
    }
    let d = rows[0].latent.len();
    let mut x = Vec::with_capacity(rows.len() * d);
    let mut y = Vec::with_capacity(rows.len() * table.dim());
    for r in rows {
        if r.latent.len() != d {
            return Err(Error::shape(format!(
                "latent {} has width {}, expected {d}",
                r.sample_id,
                r.latent.len()
            )));
        }
        if r.token_id >= table.len() {
            return Err(Error::data(format!(
                "sample {} has token id {} outside a vocabulary of {}",
                r.sample_id,
                r.token_id,
                table.len()
            )));
        }
        x.extend_from_slice(&r.latent);
        y.extend_from_slice(table.row(r.token_id));
    }
    Ok((
        Tensor::from_vec(&[rows.len(), d], x)?,
        Tensor::from_vec(&[rows.len(), table.dim()], y)?,
    ))
}

fn gather_rows(t: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let w = t.dims()[1];
    let mut data = Vec::with_capacity(idx.len() * w);
    for &i in idx {
        data.extend_from_slice(t.row(i));
    }
    Tensor::from_vec(&[idx.len(), w], data)
}

/// Trains on `[N, d]` latents against `[N, E]` targets by mean squared
/// error. The returned model is frozen.
pub fn train_alignment(
    latents: &Tensor,
    targets: &Tensor,
    spec: AlignmentSpec,
    config: &TrainConfig,
    rng: &mut RngStream,
) -> Result<(AlignmentModel, Vec<f64>)> {
    config.validate()?;
    let n = match (latents.dims(), targets.dims()) {
        ([n, d], [m, e]) if n == m && *d == spec.input_dim && *e == spec.output_dim => *n,
        (a, b) => {
            return Err(Error::shape(format!(
                "latents {a:?} and targets {b:?} do not match spec {} -> {}",
                spec.input_dim, spec.output_dim
            )))
        }
    };
    if n < 2 {
        return Err(Error::BatchSize(n));
    }
    let mut model = AlignmentModel::new(spec, &mut rng.fork(0xA1))?;
    let mut opt = config.optimizer(&model.params());
    let mut drop_rng = rng.fork(0xD0);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut total = 0.0;
        for batch in minibatches(n, config.batch_size, 2, rng) {
            let x = gather_rows(latents, &batch)?;
            let y = gather_rows(targets, &batch)?;
            let pred = model.forward(&x, Mode::Train, &mut drop_rng)?;
            let (loss, grad) = mse_loss_grad(&pred, &y)?;
            model.backward(&grad)?;
            opt.step(model.params_mut())?;
            total += loss as f64 * batch.len() as f64;
        }
        let mean = total / n as f64;
        if !mean.is_finite() {
            return Err(Error::data(format!("alignment loss diverged at epoch {epoch}")));
        }
        log::debug!("alignment epoch {epoch}: loss {mean:.6}");
        history.push(mean);
    }
    model.freeze();
    Ok((model, history))
}
