//! Convolutional autoencoder over pooled recordings.
//!
//! Encoder: three stride-2 convolutions (`C -> 64 -> 32 -> 16`, kernel 3,
//! padding 1) each followed by ReLU, a flatten, and a fully connected layer
//! `16 * L/8 -> latent_dim`. Decoder: fully connected `latent_dim -> 16 * L/8`,
//! unflatten, three transposed convolutions (`16 -> 32 -> 64 -> C`, output
//! padding 1) with ReLU after all but the last. With `L = 256` the lengths run
//! `256 -> 128 -> 64 -> 32` and back.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_param, param_checksum, read_descriptor, read_tensor, write_checkpoint};
use crate::dataset::PooledSample;
use crate::error::{Error, Result};
use crate::nn::{mse_loss_grad, Conv1d, ConvTranspose1d, Linear, Module, Param, Relu};
use crate::rng::RngStream;
use crate::signal::{PooledSignal, DEFAULT_CHANNELS, POOLED_LEN};
use crate::tensor::{Real, Tensor};
use crate::training::{minibatches, TrainConfig};

pub const CONV_CHANNELS: [usize; 3] = [64, 32, 16];
pub const KERNEL: usize = 3;
pub const STRIDE: usize = 2;
pub const PADDING: usize = 1;
pub const OUTPUT_PADDING: usize = 1;
pub const DEFAULT_LATENT_DIM: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AutoencoderSpec {
    pub channels: usize,
    pub length: usize,
    pub latent_dim: usize,
}

impl Default for AutoencoderSpec {
    fn default() -> Self {
        AutoencoderSpec {
            channels: DEFAULT_CHANNELS,
            length: POOLED_LEN,
            latent_dim: DEFAULT_LATENT_DIM,
        }
    }
}

impl AutoencoderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.latent_dim == 0 {
            return Err(Error::param("channels and latent_dim must be positive"));
        }
        if self.length == 0 || !self.length.is_multiple_of(8) {
            return Err(Error::param(format!(
                "input length {} must be a positive multiple of 8",
                self.length
            )));
        }
        Ok(())
    }

    /// Length after the three stride-2 convolutions.
    pub fn bottleneck_len(&self) -> usize {
        self.length / 8
    }

    pub fn flat_dim(&self) -> usize {
        CONV_CHANNELS[2] * self.bottleneck_len()
    }
}

#[derive(Clone, Debug)]
pub struct Encoder<T: Real = f32> {
    spec: AutoencoderSpec,
    pub convs: [Conv1d<T>; 3],
    pub fc: Linear<T>,
    relus: [Relu; 3],
}

impl<T: Real> Encoder<T> {
    pub fn new(spec: AutoencoderSpec, rng: &mut RngStream) -> Result<Self> {
        spec.validate()?;
        let [c1, c2, c3] = CONV_CHANNELS;
        Ok(Encoder {
            spec,
            convs: [
                Conv1d::new(spec.channels, c1, KERNEL, STRIDE, PADDING, rng)?,
                Conv1d::new(c1, c2, KERNEL, STRIDE, PADDING, rng)?,
                Conv1d::new(c2, c3, KERNEL, STRIDE, PADDING, rng)?,
            ],
            fc: Linear::new(spec.flat_dim(), spec.latent_dim, rng),
            relus: Default::default(),
        })
    }

    pub fn spec(&self) -> AutoencoderSpec {
        self.spec
    }

    fn batch_of(&self, x: &Tensor<T>) -> Result<usize> {
        match x.dims() {
            [b, c, l] if *c == self.spec.channels && *l == self.spec.length => Ok(*b),
            d => Err(Error::shape(format!(
                "encoder expects [B, {}, {}], got {d:?}",
                self.spec.channels, self.spec.length
            ))),
        }
    }

    /// `[B, C, L] -> [B, latent_dim]` without caching.
    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let b = self.batch_of(x)?;
        let mut h = x.clone();
        for conv in &self.convs {
            h = crate::nn::relu(&conv.apply(&h)?);
        }
        self.fc.apply(&h.reshape(&[b, self.spec.flat_dim()])?)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let b = self.batch_of(x)?;
        let mut h = x.clone();
        for (conv, relu) in self.convs.iter_mut().zip(&mut self.relus) {
            h = relu.forward(&conv.forward(&h)?);
        }
        self.fc.forward(&h.reshape(&[b, self.spec.flat_dim()])?)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let b = grad.dims()[0];
        let mut g = self
            .fc
            .backward(grad)?
            .reshape(&[b, CONV_CHANNELS[2], self.spec.bottleneck_len()])?;
        for (conv, relu) in self.convs.iter_mut().zip(&self.relus).rev() {
            g = conv.backward(&relu.backward(&g)?)?;
        }
        Ok(g)
    }
}

impl<T: Real> Module<T> for Encoder<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v: Vec<&Param<T>> = self.convs.iter().flat_map(|c| c.params()).collect();
        v.extend(self.fc.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v: Vec<&mut Param<T>> = self.convs.iter_mut().flat_map(|c| c.params_mut()).collect();
        v.extend(self.fc.params_mut());
        v
    }
}

#[derive(Clone, Debug)]
pub struct Decoder<T: Real = f32> {
    spec: AutoencoderSpec,
    pub fc: Linear<T>,
    pub deconvs: [ConvTranspose1d<T>; 3],
    relus: [Relu; 2],
}

impl<T: Real> Decoder<T> {
    pub fn new(spec: AutoencoderSpec, rng: &mut RngStream) -> Result<Self> {
        spec.validate()?;
        let [c1, c2, c3] = CONV_CHANNELS;
        Ok(Decoder {
            spec,
            fc: Linear::new(spec.latent_dim, spec.flat_dim(), rng),
            deconvs: [
                ConvTranspose1d::new(c3, c2, KERNEL, STRIDE, PADDING, OUTPUT_PADDING, rng)?,
                ConvTranspose1d::new(c2, c1, KERNEL, STRIDE, PADDING, OUTPUT_PADDING, rng)?,
                ConvTranspose1d::new(c1, spec.channels, KERNEL, STRIDE, PADDING, OUTPUT_PADDING, rng)?,
            ],
            relus: Default::default(),
        })
    }

    fn batch_of(&self, z: &Tensor<T>) -> Result<usize> {
        match z.dims() {
            [b, d] if *d == self.spec.latent_dim => Ok(*b),
            d => Err(Error::shape(format!(
                "decoder expects [B, {}], got {d:?}",
                self.spec.latent_dim
            ))),
        }
    }

    /// `[B, latent_dim] -> [B, C, L]` without caching.
    pub fn apply(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let b = self.batch_of(z)?;
        let mut h = self
            .fc
            .apply(z)?
            .reshape(&[b, CONV_CHANNELS[2], self.spec.bottleneck_len()])?;
        for (i, deconv) in self.deconvs.iter().enumerate() {
            h = deconv.apply(&h)?;
            if i < 2 {
                h = crate::nn::relu(&h);
            }
        }
        Ok(h)
    }

    pub fn forward(&mut self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let b = self.batch_of(z)?;
        let mut h = self
            .fc
            .forward(z)?
            .reshape(&[b, CONV_CHANNELS[2], self.spec.bottleneck_len()])?;
        for (i, deconv) in self.deconvs.iter_mut().enumerate() {
            h = deconv.forward(&h)?;
            if i < 2 {
                h = self.relus[i].forward(&h);
            }
        }
        Ok(h)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad.clone();
        for i in (0..3).rev() {
            if i < 2 {
                g = self.relus[i].backward(&g)?;
            }
            g = self.deconvs[i].backward(&g)?;
        }
        let b = g.dims()[0];
        let g = g.reshape(&[b, self.spec.flat_dim()])?;
        self.fc.backward(&g)
    }
}

impl<T: Real> Module<T> for Decoder<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.fc.params();
        v.extend(self.deconvs.iter().flat_map(|c| c.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.fc.params_mut();
        v.extend(self.deconvs.iter_mut().flat_map(|c| c.params_mut()));
        v
    }
}

/// Per-channel z-scoring fitted on the training set.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelNorm {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl ChannelNorm {
    pub fn identity(channels: usize) -> Self {
        ChannelNorm {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn fit(samples: &[&Tensor]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::param("cannot fit normalization on zero samples"))?;
        let [c, l] = *first.dims() else {
            return Err(Error::shape("normalization expects [C, L] samples"));
        };
        let mut sum = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        for s in samples {
            if s.dims() != [c, l] {
                return Err(Error::shape(format!("sample {:?} vs [{c}, {l}]", s.dims())));
            }
            for (ch, row) in s.data().chunks_exact(l).enumerate() {
                for &v in row {
                    sum[ch] += v as f64;
                    sq[ch] += (v as f64) * (v as f64);
                }
            }
        }
        let n = (samples.len() * l) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n - m * m).max(0.0);
                if var > 1e-12 {
                    var.sqrt() as f32
                } else {
                    1.0
                }
            })
            .collect();
        Ok(ChannelNorm {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        })
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let [c, l] = *x.dims() else {
            return Err(Error::shape("normalization expects [C, L]"));
        };
        if c != self.mean.len() {
            return Err(Error::shape(format!(
                "{c} channels, normalization has {}",
                self.mean.len()
            )));
        }
        let mut out = x.clone();
        for (ch, row) in out.data_mut().chunks_exact_mut(l).enumerate() {
            row.iter_mut().for_each(|v| *v = (*v - self.mean[ch]) / self.std[ch]);
        }
        Ok(out)
    }
}

/// Encoder, decoder and input normalization trained together. After
/// training the encoder is frozen and the decoder is only kept for
/// diagnostics.
#[derive(Clone, Debug)]
pub struct Autoencoder {
    pub encoder: Encoder<f32>,
    pub decoder: Decoder<f32>,
    pub norm: ChannelNorm,
    frozen: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct AutoencoderDescriptor {
    kind: String,
    spec: AutoencoderSpec,
    frozen: bool,
    params: Vec<String>,
    train: Option<TrainConfig>,
}

fn encoder_param_names() -> Vec<String> {
    let mut names: Vec<String> = (1..=3)
        .flat_map(|i| [format!("encoder.conv{i}.weight"), format!("encoder.conv{i}.bias")])
        .collect();
    names.extend(["encoder.fc.weight".into(), "encoder.fc.bias".into()]);
    names
}

fn decoder_param_names() -> Vec<String> {
    let mut names = vec!["decoder.fc.weight".to_string(), "decoder.fc.bias".to_string()];
    names.extend((1..=3).flat_map(|i| [format!("decoder.deconv{i}.weight"), format!("decoder.deconv{i}.bias")]));
    names
}

impl Autoencoder {
    pub fn new(spec: AutoencoderSpec, rng: &mut RngStream) -> Result<Self> {
        Ok(Autoencoder {
            encoder: Encoder::new(spec, rng)?,
            decoder: Decoder::new(spec, rng)?,
            norm: ChannelNorm::identity(spec.channels),
            frozen: false,
        })
    }

    pub fn spec(&self) -> AutoencoderSpec {
        self.encoder.spec()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Checksum over encoder parameters.
    pub fn encoder_checksum(&self) -> u64 {
        param_checksum(self.encoder.params())
    }

    /// Normalizes and encodes one pooled signal into a `[latent_dim]` vector.
    pub fn encode(&self, pooled: &PooledSignal) -> Result<Tensor> {
        self.encode_batch(&[&pooled.values])
            .and_then(|z| z.reshape(&[self.spec().latent_dim]))
    }

    pub fn encode_batch(&self, pooled: &[&Tensor]) -> Result<Tensor> {
        let normalized = pooled.iter().map(|p| self.norm.apply(p)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor> = normalized.iter().collect();
        self.encoder.apply(&Tensor::stack(&refs)?)
    }

    /// Decodes a `[latent_dim]` vector into a normalized-space reconstruction.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let spec = self.spec();
        if z.dims() != [spec.latent_dim] {
            return Err(Error::shape(format!(
                "latent must be [{}], got {:?}",
                spec.latent_dim,
                z.dims()
            )));
        }
        self.decoder
            .apply(&z.clone().reshape(&[1, spec.latent_dim])?)?
            .reshape(&[spec.channels, spec.length])
    }

    pub fn save(&self, dir: impl AsRef<Path>, train: Option<&TrainConfig>) -> Result<()> {
        let enc_names = encoder_param_names();
        let dec_names = decoder_param_names();
        let mut tensors: Vec<(String, &Tensor)> = enc_names
            .iter()
            .cloned()
            .zip(self.encoder.params().into_iter().map(|p| &p.value))
            .chain(
                dec_names
                    .iter()
                    .cloned()
                    .zip(self.decoder.params().into_iter().map(|p| &p.value)),
            )
            .collect();
        let c = self.spec().channels;
        let mean = Tensor::from_vec(&[c], self.norm.mean.clone())?;
        let std = Tensor::from_vec(&[c], self.norm.std.clone())?;
        tensors.push(("norm.mean".into(), &mean));
        tensors.push(("norm.std".into(), &std));
        let descriptor = AutoencoderDescriptor {
            kind: "autoencoder".into(),
            spec: self.spec(),
            frozen: self.frozen,
            params: tensors.iter().map(|(n, _)| n.clone()).collect(),
            train: train.cloned(),
        };
        write_checkpoint(dir, &descriptor, &tensors)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let desc: AutoencoderDescriptor = read_descriptor(dir)?;
        if desc.kind != "autoencoder" {
            return Err(Error::load(
                dir,
                format!("checkpoint kind {:?} is not an autoencoder", desc.kind),
            ));
        }
        let mut ae = Autoencoder::new(desc.spec, &mut RngStream::new(0))?;
        for (name, p) in encoder_param_names().iter().zip(ae.encoder.params_mut()) {
            load_param(dir, name, p)?;
        }
        for (name, p) in decoder_param_names().iter().zip(ae.decoder.params_mut()) {
            load_param(dir, name, p)?;
        }
        let c = desc.spec.channels;
        ae.norm = ChannelNorm {
            mean: read_tensor(dir, "norm.mean", &[c])?.into_data(),
            std: read_tensor(dir, "norm.std", &[c])?.into_data(),
        };
        ae.frozen = desc.frozen;
        Ok(ae)
    }
}

/// Per-epoch mean reconstruction loss.
pub type LossHistory = Vec<f64>;

/// Trains on pooled signals by minimizing the mean squared reconstruction
/// error over samples and elements. The returned model's encoder is frozen.
pub fn train_autoencoder(
    pooled: &[&Tensor],
    spec: AutoencoderSpec,
    config: &TrainConfig,
    rng: &mut RngStream,
) -> Result<(Autoencoder, LossHistory)> {
    if pooled.is_empty() {
        return Err(Error::param("cannot train an autoencoder on an empty dataset"));
    }
    config.validate()?;
    let mut init_rng = rng.fork(0xAE);
    let mut ae = Autoencoder::new(spec, &mut init_rng)?;
    ae.norm = ChannelNorm::fit(pooled)?;
    let inputs = pooled.iter().map(|p| ae.norm.apply(p)).collect::<Result<Vec<_>>>()?;

    let mut opt = {
        let params: Vec<&Param> = ae.encoder.params().into_iter().chain(ae.decoder.params()).collect();
        config.optimizer(&params)
    };
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut total = 0.0;
        for batch in minibatches(inputs.len(), config.batch_size, 1, rng) {
            let items: Vec<&Tensor> = batch.iter().map(|&i| &inputs[i]).collect();
            let x = Tensor::stack(&items)?;
            let z = ae.encoder.forward(&x)?;
            let recon = ae.decoder.forward(&z)?;
            let (loss, grad) = mse_loss_grad(&recon, &x)?;
            let gz = ae.decoder.backward(&grad)?;
            ae.encoder.backward(&gz)?;
            let params: Vec<&mut Param> = ae
                .encoder
                .params_mut()
                .into_iter()
                .chain(ae.decoder.params_mut())
                .collect();
            opt.step(params)?;
            total += loss as f64 * batch.len() as f64;
        }
        let mean = total / inputs.len() as f64;
        if !mean.is_finite() {
            return Err(Error::data(format!("autoencoder loss diverged at epoch {epoch}")));
        }
        log::debug!("autoencoder epoch {epoch}: loss {mean:.6}");
        history.push(mean);
    }
    ae.freeze();
    Ok((ae, history))
}

/// One encoded sample.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentRow {
    pub sample_id: String,
    pub subject: String,
    pub token_id: usize,
    pub token_text: String,
    pub latent: Vec<f32>,
}

/// Encodes every sample with the frozen encoder. The decoder is not used.
pub fn extract_latents(samples: &[PooledSample], ae: &Autoencoder) -> Result<Vec<LatentRow>> {
    const CHUNK: usize = 64;
    let mut rows = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(CHUNK) {
        let inputs: Vec<&Tensor> = chunk.iter().map(|s| &s.pooled.values).collect();
        let z = ae.encode_batch(&inputs)?;
        for (i, s) in chunk.iter().enumerate() {
            rows.push(LatentRow {
                sample_id: s.id.clone(),
                subject: s.subject.clone(),
                token_id: s.token_id,
                token_text: s.token_text.clone(),
                latent: z.row(i).to_vec(),
            });
        }
    }
    Ok(rows)
}

/// Stacks latent rows into an `[N, latent_dim]` tensor.
pub fn latent_matrix(rows: &[LatentRow]) -> Result<Tensor> {
    let d = rows.first().map_or(0, |r| r.latent.len());
    let data: Vec<f32> = rows.iter().flat_map(|r| r.latent.iter().copied()).collect();
    Tensor::from_vec(&[rows.len(), d], data)
}
