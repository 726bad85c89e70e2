pub mod ablation;
pub mod alignment;
pub mod autoencoder;
pub mod bridge;
pub mod checkpoint;
pub mod dataset;
pub mod decode;
pub mod error;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod signal;
pub mod split;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use rng::RngStream;
pub use tensor::{Real, Tensor};
