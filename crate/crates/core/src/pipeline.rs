//! Both training stages run back to back on one set of training samples.

use serde::{Deserialize, Serialize};

use crate::alignment::{alignment_pairs, train_alignment, AlignmentModel, AlignmentSpec, DROPOUT_RATE, HIDDEN_WIDTHS};
use crate::autoencoder::{extract_latents, train_autoencoder, Autoencoder, AutoencoderSpec, DEFAULT_LATENT_DIM};
use crate::dataset::{EmbeddingTable, PooledSample};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::signal::POOLED_LEN;
use crate::tensor::Tensor;
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub pooled_len: usize,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub autoencoder: TrainConfig,
    pub alignment: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            pooled_len: POOLED_LEN,
            latent_dim: DEFAULT_LATENT_DIM,
            hidden: HIDDEN_WIDTHS.to_vec(),
            dropout: DROPOUT_RATE,
            autoencoder: TrainConfig {
                epochs: 50,
                ..TrainConfig::default()
            },
            alignment: TrainConfig {
                epochs: 100,
                ..TrainConfig::default()
            },
        }
    }
}

impl PipelineConfig {
    pub fn autoencoder_spec(&self, channels: usize) -> AutoencoderSpec {
        AutoencoderSpec {
            channels,
            length: self.pooled_len,
            latent_dim: self.latent_dim,
        }
    }

    pub fn alignment_spec(&self, embedding_dim: usize) -> AlignmentSpec {
        AlignmentSpec {
            input_dim: self.latent_dim,
            hidden: self.hidden.clone(),
            output_dim: embedding_dim,
            dropout: self.dropout,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedPipeline {
    pub autoencoder: Autoencoder,
    pub alignment: AlignmentModel,
    pub autoencoder_loss: Vec<f64>,
    pub alignment_loss: Vec<f64>,
}

/// Trains the autoencoder, freezes it, extracts latents and trains the
/// alignment network against the tokens' embedding rows.
pub fn train_pipeline(
    train: &[PooledSample],
    table: &EmbeddingTable,
    config: &PipelineConfig,
    rng: &RngStream,
) -> Result<TrainedPipeline> {
    let first = train.first().ok_or_else(|| Error::param("no training samples"))?;
    let channels = first.pooled.values.dims()[0];
    let inputs: Vec<&Tensor> = train.iter().map(|s| &s.pooled.values).collect();
    let (autoencoder, autoencoder_loss) = train_autoencoder(
        &inputs,
        config.autoencoder_spec(channels),
        &config.autoencoder,
        &mut rng.fork(1),
    )?;
    let rows = extract_latents(train, &autoencoder)?;
    let (x, y) = alignment_pairs(&rows, table)?;
    let (alignment, alignment_loss) = train_alignment(
        &x,
        &y,
        config.alignment_spec(table.dim()),
        &config.alignment,
        &mut rng.fork(2),
    )?;
    Ok(TrainedPipeline {
        autoencoder,
        alignment,
        autoencoder_loss,
        alignment_loss,
    })
}
