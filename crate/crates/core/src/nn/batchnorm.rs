use super::{Mode, Module, Param};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Batch normalization over `[B, F]` with learned scale (`weight`) and shift
/// (`bias`). Running statistics are buffers, not parameters.
#[derive(Clone, Debug)]
pub struct BatchNorm1d<T: Real = f32> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: T,
    pub epsilon: T,
    cache: Option<Cache<T>>,
}

#[derive(Clone, Debug)]
struct Cache<T> {
    normalized: Vec<T>,
    inv_std: Vec<T>,
    batch: usize,
    mode: Mode,
}

impl<T: Real> BatchNorm1d<T> {
    pub fn new(features: usize) -> Self {
        BatchNorm1d {
            weight: Param::new(Tensor::full(&[features], T::one())),
            bias: Param::new(Tensor::zeros(&[features])),
            running_mean: Tensor::zeros(&[features]),
            running_var: Tensor::full(&[features], T::one()),
            momentum: T::lit(DEFAULT_MOMENTUM),
            epsilon: T::lit(DEFAULT_EPSILON),
            cache: None,
        }
    }

    pub fn features(&self) -> usize {
        self.weight.value.len()
    }

    fn batch_of(&self, input: &Tensor<T>) -> Result<usize> {
        match input.dims() {
            [b, f] if *f == self.features() => Ok(*b),
            d => Err(Error::shape(format!(
                "batch-norm expects [B, {}], got {d:?}",
                self.features()
            ))),
        }
    }

    /// Eval-mode normalization from running statistics; never mutates state.
    pub fn apply(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let _ = self.batch_of(input)?;
        let f = self.features();
        let scale: Vec<T> = (0..f)
            .map(|j| self.weight.value.data()[j] / (self.running_var.data()[j] + self.epsilon).sqrt())
            .collect();
        let mut out = input.clone();
        for row in out.data_mut().chunks_exact_mut(f) {
            for j in 0..f {
                row[j] = (row[j] - self.running_mean.data()[j]) * scale[j] + self.bias.value.data()[j];
            }
        }
        Ok(out)
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let b = self.batch_of(input)?;
        let f = self.features();
        match mode {
            Mode::Eval => {
                let inv_std: Vec<T> = (0..f)
                    .map(|j| T::one() / (self.running_var.data()[j] + self.epsilon).sqrt())
                    .collect();
                let mut normalized = input.data().to_vec();
                for row in normalized.chunks_exact_mut(f) {
                    for j in 0..f {
                        row[j] = (row[j] - self.running_mean.data()[j]) * inv_std[j];
                    }
                }
                let out = self.apply(input)?;
                self.cache = Some(Cache {
                    normalized,
                    inv_std,
                    batch: b,
                    mode,
                });
                Ok(out)
            }
            Mode::Train => {
                if b < 2 {
                    return Err(Error::BatchSize(b));
                }
                let n = T::from_usize(b).unwrap();
                let mut mean = vec![T::zero(); f];
                for row in input.data().chunks_exact(f) {
                    for (m, &v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                let mut var = vec![T::zero(); f];
                for row in input.data().chunks_exact(f) {
                    for j in 0..f {
                        let d = row[j] - mean[j];
                        var[j] += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= n);
                let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + self.epsilon).sqrt()).collect();

                let mut normalized = vec![T::zero(); b * f];
                let mut out = vec![T::zero(); b * f];
                for ((row, nrow), orow) in input
                    .data()
                    .chunks_exact(f)
                    .zip(normalized.chunks_exact_mut(f))
                    .zip(out.chunks_exact_mut(f))
                {
                    for j in 0..f {
                        nrow[j] = (row[j] - mean[j]) * inv_std[j];
                        orow[j] = nrow[j] * self.weight.value.data()[j] + self.bias.value.data()[j];
                    }
                }

                // running variance tracks the unbiased estimate
                let unbias = n / (n - T::one());
                let mom = self.momentum;
                for j in 0..f {
                    let rm = &mut self.running_mean.data_mut()[j];
                    *rm = (T::one() - mom) * *rm + mom * mean[j];
                    let rv = &mut self.running_var.data_mut()[j];
                    *rv = (T::one() - mom) * *rv + mom * var[j] * unbias;
                }

                self.cache = Some(Cache {
                    normalized,
                    inv_std,
                    batch: b,
                    mode,
                });
                Tensor::from_vec(input.dims(), out)
            }
        }
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::state("batch-norm backward called before forward"))?;
        let f = self.features();
        let b = cache.batch;
        if grad_out.len() != b * f {
            return Err(Error::shape(format!("batch-norm grad {:?}", grad_out.dims())));
        }
        let gamma = self.weight.value.data();
        let mut grad_in = vec![T::zero(); b * f];
        let mut sum_g = vec![T::zero(); f];
        let mut sum_gx = vec![T::zero(); f];
        for (g_row, x_row) in grad_out.data().chunks_exact(f).zip(cache.normalized.chunks_exact(f)) {
            for j in 0..f {
                sum_g[j] += g_row[j];
                sum_gx[j] += g_row[j] * x_row[j];
            }
        }
        for j in 0..f {
            self.bias.grad.data_mut()[j] += sum_g[j];
            self.weight.grad.data_mut()[j] += sum_gx[j];
        }
        match cache.mode {
            Mode::Eval => {
                for (g_row, gi_row) in grad_out.data().chunks_exact(f).zip(grad_in.chunks_exact_mut(f)) {
                    for j in 0..f {
                        gi_row[j] = g_row[j] * gamma[j] * cache.inv_std[j];
                    }
                }
            }
            Mode::Train => {
                let n = T::from_usize(b).unwrap();
                for ((g_row, x_row), gi_row) in grad_out
                    .data()
                    .chunks_exact(f)
                    .zip(cache.normalized.chunks_exact(f))
                    .zip(grad_in.chunks_exact_mut(f))
                {
                    for j in 0..f {
                        // dx = gamma * inv_std / B * (B g - sum g - x_hat sum(g x_hat))
                        gi_row[j] = gamma[j] * cache.inv_std[j] / n * (n * g_row[j] - sum_g[j] - x_row[j] * sum_gx[j]);
                    }
                }
            }
        }
        Tensor::from_vec(&[b, f], grad_in)
    }
}

impl<T: Real> Module<T> for BatchNorm1d<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn train_output_is_standardized() {
        let mut rng = RngStream::new(11);
        let mut bn = BatchNorm1d::<f64>::new(4);
        let x = Tensor::from_fn(&[64, 4], |i| 3.0 + (i % 4) as f64 * rng.normal() * 2.0);
        let y = bn.forward(&x, Mode::Train).unwrap();
        for j in 0..4 {
            let col: Vec<f64> = (0..64).map(|i| y.data()[i * 4 + j]).collect();
            let mean = col.iter().sum::<f64>() / 64.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
            assert!(mean.abs() < 1e-6, "mean {mean}");
            if j > 0 {
                assert!((var - 1.0).abs() < 1e-4, "var {var}");
            }
        }
    }

    #[test]
    fn eval_with_unit_stats_is_identity() {
        let bn = BatchNorm1d::<f64>::new(3);
        let x = Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, -9.0]).unwrap();
        let y = bn.apply(&x).unwrap();
        let scale = 1.0 / (1.0f64 + 1e-5).sqrt();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a * scale - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_feature_stays_finite() {
        let mut bn = BatchNorm1d::<f32>::new(2);
        let x = Tensor::full(&[8, 2], 5.0);
        let y = bn.forward(&x, Mode::Train).unwrap();
        assert!(y.all_finite());
        assert!(bn.running_var.data().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn train_needs_two_samples() {
        let mut bn = BatchNorm1d::<f32>::new(2);
        assert!(matches!(
            bn.forward(&Tensor::zeros(&[1, 2]), Mode::Train),
            Err(Error::BatchSize(1))
        ));
        assert!(bn.forward(&Tensor::zeros(&[1, 2]), Mode::Eval).is_ok());
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut bn = BatchNorm1d::<f64>::new(1);
        let x = Tensor::from_vec(&[2, 1], vec![1.0, 3.0]).unwrap();
        bn.forward(&x, Mode::Train).unwrap();
        assert!((bn.running_mean.data()[0] - 0.2).abs() < 1e-12);
        // unbiased var of [1,3] is 2
        assert!((bn.running_var.data()[0] - (0.9 + 0.2)).abs() < 1e-12);
    }
}
