//! Adam optimizer with bias correction.

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::num::{real, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub step: u64,
    /// First moment per parameter tensor.
    pub m: Vec<Tensor<T>>,
    /// Second moment per parameter tensor.
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[&Tensor<T>], lr: T) -> Self {
        Self {
            lr,
            beta1: real(0.9),
            beta2: real(0.999),
            eps: real(1e-8),
            step: 0,
            m: params.iter().map(|p| p.zeros_like()).collect(),
            v: params.iter().map(|p| p.zeros_like()).collect(),
        }
    }

    /// One update. `params` and `grads` must match the layout the state was
    /// created with.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "adam has {} slots, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = real::<T>(self.step as f64);
        let bc1 = T::one() - self.beta1.powf(t);
        let bc2 = T::one() - self.beta2.powf(t);
        let one = T::one();
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if p.shape != g.shape {
                return Err(Error::ShapeMismatch(format!(
                    "param {:?} vs grad {:?}",
                    p.shape, g.shape
                )));
            }
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = self.beta1 * m.data[i] + (one - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (one - self.beta2) * gi * gi;
                let m_hat = m.data[i] / bc1;
                let v_hat = v.data[i] / bc2;
                p.data[i] = p.data[i] - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
