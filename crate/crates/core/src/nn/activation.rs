use super::Mode;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{Real, Tensor};

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

#[derive(Clone, Debug, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward<T: Real>(&mut self, input: &Tensor<T>) -> Tensor<T> {
        self.mask = Some(input.data().iter().map(|&v| v > T::zero()).collect());
        relu(input)
    }

    pub fn backward<T: Real>(&self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let mask = self
            .mask
            .as_ref()
            .ok_or_else(|| Error::state("relu backward called before forward"))?;
        if mask.len() != grad_out.len() {
            return Err(Error::shape("relu grad length mismatch"));
        }
        let data = grad_out
            .data()
            .iter()
            .zip(mask)
            .map(|(&g, &m)| if m { g } else { T::zero() })
            .collect();
        Tensor::from_vec(grad_out.dims(), data)
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::param(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)` in train mode,
/// eval mode is the exact identity.
pub fn dropout<T: Real>(input: &Tensor<T>, rate: f64, mode: Mode, rng: &mut RngStream) -> Result<Tensor<T>> {
    let mut layer = Dropout::new(rate)?;
    layer.forward(input, mode, rng)
}

#[derive(Clone, Debug)]
pub struct Dropout {
    rate: f64,
    // per-element multiplier: 0 or 1/(1-rate); None in eval mode
    scale: Option<Vec<f64>>,
    cached: bool,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        check_rate(rate)?;
        Ok(Dropout {
            rate,
            scale: None,
            cached: false,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn forward<T: Real>(&mut self, input: &Tensor<T>, mode: Mode, rng: &mut RngStream) -> Result<Tensor<T>> {
        self.cached = true;
        if mode == Mode::Eval || self.rate == 0.0 {
            self.scale = None;
            return Ok(input.clone());
        }
        let keep = 1.0 / (1.0 - self.rate);
        let scale: Vec<f64> = (0..input.len())
            .map(|_| if rng.bernoulli(self.rate) { 0.0 } else { keep })
            .collect();
        let data = input.data().iter().zip(&scale).map(|(&v, &s)| v * T::lit(s)).collect();
        self.scale = Some(scale);
        Tensor::from_vec(input.dims(), data)
    }

    pub fn backward<T: Real>(&self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        if !self.cached {
            return Err(Error::state("dropout backward called before forward"));
        }
        match &self.scale {
            None => Ok(grad_out.clone()),
            Some(scale) => {
                let data = grad_out
                    .data()
                    .iter()
                    .zip(scale)
                    .map(|(&g, &s)| g * T::lit(s))
                    .collect();
                Tensor::from_vec(grad_out.dims(), data)
            }
        }
    }
}
