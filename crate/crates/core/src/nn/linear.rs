use super::{batch_view, init_uniform, Module, Param};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{Real, Tensor};

/// Fully connected layer, `y = W x + b` with `W` stored as `out x in`.
#[derive(Clone, Debug)]
pub struct Linear<T: Real = f32> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Real> Linear<T> {
    pub fn new(in_features: usize, out_features: usize, rng: &mut RngStream) -> Self {
        let weight = init_uniform(&[out_features, in_features], in_features, rng);
        Self::from_parts(weight, Tensor::zeros(&[out_features])).expect("consistent shapes")
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if weight.dims().len() != 2 || bias.dims() != [weight.dims()[0]] {
            return Err(Error::shape(format!(
                "linear weight {:?} / bias {:?}",
                weight.dims(),
                bias.dims()
            )));
        }
        Ok(Linear {
            weight: Param::new(weight),
            bias: Param::new(bias),
            cache: None,
        })
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.dims()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.dims()[0]
    }

    fn batch_of(&self, input: &Tensor<T>) -> Result<usize> {
        match batch_view(input.dims(), 1) {
            Some((b, [n])) if *n == self.in_features() => Ok(b),
            _ => Err(Error::shape(format!(
                "linear expects [.., {}], got {:?}",
                self.in_features(),
                input.dims()
            ))),
        }
    }

    /// Accepts `[in]` or `[B, in]`; returns `[out]` or `[B, out]` accordingly.
    pub fn apply(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let b = self.batch_of(input)?;
        let (m, n) = (self.out_features(), self.in_features());
        let mut out = Vec::with_capacity(b * m);
        for _ in 0..b {
            out.extend_from_slice(self.bias.value.data());
        }
        T::gemm(
            false,
            true,
            b,
            m,
            n,
            T::one(),
            input.data(),
            self.weight.value.data(),
            T::one(),
            &mut out,
        );
        let dims = if input.dims().len() == 1 { vec![m] } else { vec![b, m] };
        Tensor::from_vec(&dims, out)
    }

    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.apply(input)?;
        self.cache = Some(input.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::state("linear backward called before forward"))?;
        let b = self.batch_of(input)?;
        let (m, n) = (self.out_features(), self.in_features());
        if grad_out.len() != b * m {
            return Err(Error::shape(format!(
                "linear grad {:?} does not match batch {b} x {m}",
                grad_out.dims()
            )));
        }
        // dW += g^T x, db += sum_b g, dx = g W
        T::gemm(
            true,
            false,
            m,
            n,
            b,
            T::one(),
            grad_out.data(),
            input.data(),
            T::one(),
            self.weight.grad.data_mut(),
        );
        let db = self.bias.grad.data_mut();
        for row in grad_out.data().chunks_exact(m) {
            for (acc, &g) in db.iter_mut().zip(row) {
                *acc += g;
            }
        }
        let mut grad_in = vec![T::zero(); b * n];
        T::gemm(
            false,
            false,
            b,
            n,
            m,
            T::one(),
            grad_out.data(),
            self.weight.value.data(),
            T::zero(),
            &mut grad_in,
        );
        Tensor::from_vec(input.dims(), grad_in)
    }
}

impl<T: Real> Module<T> for Linear<T> {
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

    fn layer(w: &[f64], b: &[f64], m: usize, n: usize) -> Linear<f64> {
        Linear::from_parts(
            Tensor::from_vec(&[m, n], w.to_vec()).unwrap(),
            Tensor::from_vec(&[m], b.to_vec()).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn hand_computed_affine() {
        let l = layer(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0], 2, 2);
        let y = l.apply(&Tensor::from_vec(&[2], vec![1.0, 1.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[4.0, 8.0]);
    }

    #[test]
    fn identity_weight_passes_input_through() {
        let l = layer(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], &[0.0; 3], 3, 3);
        let x = Tensor::from_vec(&[2, 3], vec![0.5, -1.0, 2.0, 3.0, 0.0, -7.0]).unwrap();
        assert_eq!(l.apply(&x).unwrap(), x);
    }

    #[test]
    fn zero_input_yields_bias() {
        let l = layer(&[0.3, -0.2, 0.9, 1.1], &[0.25, -4.0], 2, 2);
        let y = l.apply(&Tensor::zeros(&[2])).unwrap();
        assert_eq!(y.data(), &[0.25, -4.0]);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let l = layer(&[1.0; 6], &[0.0; 2], 2, 3);
        assert!(matches!(l.apply(&Tensor::zeros(&[2])), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_requires_forward() {
        let mut l = layer(&[1.0; 4], &[0.0; 2], 2, 2);
        assert!(matches!(l.backward(&Tensor::zeros(&[2])), Err(Error::State(_))));
    }
}
