use serde::{Deserialize, Serialize};

use super::Param;
use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// SGD or bias-corrected Adam over an ordered parameter list.
#[derive(Clone, Debug)]
pub struct Optimizer<T: Real = f32> {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first_moment: Vec<Vec<T>>,
    second_moment: Vec<Vec<T>>,
    initialized: bool,
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Optimizer {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            initialized: false,
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    /// Adam with moment buffers allocated for `params`.
    pub fn adam(learning_rate: f64, params: &[&Param<T>]) -> Self {
        let mut opt = Self::new(OptimizerKind::Adam, learning_rate);
        opt.init(params);
        opt
    }

    /// Allocates zeroed moment buffers matching `params`.
    pub fn init(&mut self, params: &[&Param<T>]) {
        self.first_moment = params.iter().map(|p| vec![T::zero(); p.value.len()]).collect();
        self.second_moment = self.first_moment.clone();
        self.initialized = true;
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update and clears the gradients.
    pub fn step(&mut self, mut params: Vec<&mut Param<T>>) -> Result<()> {
        if self.kind == OptimizerKind::Adam {
            if !self.initialized {
                return Err(Error::state("adam moment buffers are not initialized"));
            }
            let matches = self.first_moment.len() == params.len()
                && self
                    .first_moment
                    .iter()
                    .zip(&params)
                    .all(|(m, p)| m.len() == p.value.len());
            if !matches {
                return Err(Error::state("adam moment buffers do not match the parameters"));
            }
        }
        self.step += 1;
        let lr = T::lit(self.learning_rate);
        match self.kind {
            OptimizerKind::Sgd => {
                for p in params.iter_mut() {
                    let Param { value, grad } = &mut **p;
                    for (v, &g) in value.data_mut().iter_mut().zip(grad.data()) {
                        *v -= lr * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
                let c1 = T::one() - T::lit(self.beta1.powi(t));
                let c2 = T::one() - T::lit(self.beta2.powi(t));
                let eps = T::lit(self.epsilon);
                for ((p, m), v) in params
                    .iter_mut()
                    .zip(&mut self.first_moment)
                    .zip(&mut self.second_moment)
                {
                    let Param { value, grad } = &mut **p;
                    for (((w, &g), m), v) in value
                        .data_mut()
                        .iter_mut()
                        .zip(grad.data())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        *m = b1 * *m + (T::one() - b1) * g;
                        *v = b2 * *v + (T::one() - b2) * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *w -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        for p in params {
            p.zero_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar(v: f64, g: f64) -> Param<f64> {
        let mut p = Param::new(Tensor::from_vec(&[1], vec![v]).unwrap());
        p.grad.data_mut()[0] = g;
        p
    }

    #[test]
    fn sgd_update() {
        let mut p = scalar(1.0, 0.5);
        let mut opt = Optimizer::sgd(0.1);
        opt.step(vec![&mut p]).unwrap();
        assert!((p.value.data()[0] - 0.95).abs() < 1e-15);
        assert_eq!(p.grad.data()[0], 0.0);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut p = scalar(0.0, 1.0);
        let mut opt = Optimizer::adam(0.001, &[&p]);
        opt.step(vec![&mut p]).unwrap();
        let update = p.value.data()[0];
        assert!((update + 0.001).abs() < 1e-8, "{update}");
        assert_eq!(opt.steps_taken(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar(0.7, 0.0);
        Optimizer::sgd(1.0).step(vec![&mut p]).unwrap();
        assert_eq!(p.value.data()[0], 0.7);
        let mut opt = Optimizer::adam(0.1, &[&p]);
        opt.step(vec![&mut p]).unwrap();
        assert_eq!(p.value.data()[0], 0.7);
    }

    #[test]
    fn adam_without_buffers_is_state_error() {
        let mut p = scalar(0.0, 1.0);
        let mut opt = Optimizer::<f64>::new(OptimizerKind::Adam, 0.1);
        assert!(matches!(opt.step(vec![&mut p]), Err(Error::State(_))));
        let q = scalar(0.0, 1.0);
        opt.init(&[&q, &q]);
        assert!(matches!(opt.step(vec![&mut p]), Err(Error::State(_))));
    }
}
