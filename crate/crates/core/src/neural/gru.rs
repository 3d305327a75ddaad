//! A single GRU cell with the standard 3-gate formulation.
//!
//! r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
//! z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
//! n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
//! h' = (1 - z) * n + z * h

use super::layers::sigmoid;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::num::Real;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct GruCell<T> {
    /// [3H, I] stacked (r, z, n) input weights.
    pub w_ih: Tensor<T>,
    /// [3H, H] stacked (r, z, n) hidden weights.
    pub w_hh: Tensor<T>,
    /// [3H]
    pub b_ih: Tensor<T>,
    /// [3H]
    pub b_hh: Tensor<T>,
}

/// Activations saved by the forward pass, consumed by backward.
#[derive(Debug, Clone)]
pub struct GruCache<T> {
    pub x: Vec<T>,
    pub h: Vec<T>,
    pub r: Vec<T>,
    pub z: Vec<T>,
    pub n: Vec<T>,
    /// W_hn h + b_hn (pre-gating hidden candidate).
    pub hn_pre: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct GruGrads<T> {
    pub w_ih: Tensor<T>,
    pub w_hh: Tensor<T>,
    pub b_ih: Tensor<T>,
    pub b_hh: Tensor<T>,
}

impl<T: Real> GruCell<T> {
    pub fn new(input_dim: usize, hidden_dim: usize, rng: &mut rng::Stream) -> Self {
        let std_i = (1.0 / input_dim as f64).sqrt();
        let std_h = (1.0 / hidden_dim as f64).sqrt();
        Self {
            w_ih: Tensor::randn(&[3 * hidden_dim, input_dim], std_i, rng),
            w_hh: Tensor::randn(&[3 * hidden_dim, hidden_dim], std_h, rng),
            b_ih: Tensor::zeros(&[3 * hidden_dim]),
            b_hh: Tensor::zeros(&[3 * hidden_dim]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.shape[1]
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hh.shape[1]
    }

    pub fn grads_zero(&self) -> GruGrads<T> {
        GruGrads {
            w_ih: Tensor::zeros(&self.w_ih.shape),
            w_hh: Tensor::zeros(&self.w_hh.shape),
            b_ih: Tensor::zeros(&self.b_ih.shape),
            b_hh: Tensor::zeros(&self.b_hh.shape),
        }
    }

    pub fn forward(&self, x: &[T], h: &[T]) -> Result<(Vec<T>, GruCache<T>)> {
        let hd = self.hidden_dim();
        let id = self.input_dim();
        if x.len() != id || h.len() != hd {
            return Err(Error::ShapeMismatch(format!(
                "gru expects x[{id}], h[{hd}]; got x[{}], h[{}]",
                x.len(),
                h.len()
            )));
        }
        // gi = W_ih x + b_ih; gh = W_hh h + b_hh, both [3H].
        let matvec = |w: &Tensor<T>, b: &Tensor<T>, v: &[T], dim: usize| -> Vec<T> {
            let mut out = vec![T::zero(); 3 * hd];
            for o in 0..3 * hd {
                let row = &w.data[o * dim..(o + 1) * dim];
                let mut acc = b.data[o];
                for i in 0..dim {
                    acc = acc + row[i] * v[i];
                }
                out[o] = acc;
            }
            out
        };
        let gi = matvec(&self.w_ih, &self.b_ih, x, id);
        let gh = matvec(&self.w_hh, &self.b_hh, h, hd);

        let mut r = vec![T::zero(); hd];
        let mut z = vec![T::zero(); hd];
        let mut n = vec![T::zero(); hd];
        let mut hn_pre = vec![T::zero(); hd];
        let mut h_new = vec![T::zero(); hd];
        for i in 0..hd {
            r[i] = sigmoid(gi[i] + gh[i]);
            z[i] = sigmoid(gi[hd + i] + gh[hd + i]);
            hn_pre[i] = gh[2 * hd + i];
            n[i] = (gi[2 * hd + i] + r[i] * hn_pre[i]).tanh();
            h_new[i] = (T::one() - z[i]) * n[i] + z[i] * h[i];
        }
        Ok((
            h_new,
            GruCache {
                x: x.to_vec(),
                h: h.to_vec(),
                r,
                z,
                n,
                hn_pre,
            },
        ))
    }

    /// Backward through one cell. Returns (dx, dh_prev) and accumulates
    /// parameter gradients.
    pub fn backward_acc(
        &self,
        cache: &GruCache<T>,
        dh_new: &[T],
        acc: &mut GruGrads<T>,
    ) -> (Vec<T>, Vec<T>) {
        let hd = self.hidden_dim();
        let id = self.input_dim();
        let one = T::one();

        // Gate pre-activation gradients, stacked [r, z, n] like the weights.
        let mut dgi = vec![T::zero(); 3 * hd];
        let mut dgh = vec![T::zero(); 3 * hd];
        let mut dh_prev = vec![T::zero(); hd];
        for i in 0..hd {
            let g = dh_new[i];
            let (r, z, n, h) = (cache.r[i], cache.z[i], cache.n[i], cache.h[i]);
            let dz = g * (h - n);
            let dn = g * (one - z);
            let dn_pre = dn * (one - n * n);
            let dr = dn_pre * cache.hn_pre[i];
            let dr_pre = dr * r * (one - r);
            let dz_pre = dz * z * (one - z);

            dgi[i] = dr_pre;
            dgi[hd + i] = dz_pre;
            dgi[2 * hd + i] = dn_pre;
            dgh[i] = dr_pre;
            dgh[hd + i] = dz_pre;
            dgh[2 * hd + i] = dn_pre * r;
            dh_prev[i] = g * z;
        }

        let mut dx = vec![T::zero(); id];
        for o in 0..3 * hd {
            let gi = dgi[o];
            let gh = dgh[o];
            acc.b_ih.data[o] = acc.b_ih.data[o] + gi;
            acc.b_hh.data[o] = acc.b_hh.data[o] + gh;
            let wi = &self.w_ih.data[o * id..(o + 1) * id];
            let dwi = &mut acc.w_ih.data[o * id..(o + 1) * id];
            for i in 0..id {
                dx[i] = dx[i] + wi[i] * gi;
                dwi[i] = dwi[i] + cache.x[i] * gi;
            }
            let wh = &self.w_hh.data[o * hd..(o + 1) * hd];
            let dwh = &mut acc.w_hh.data[o * hd..(o + 1) * hd];
            for i in 0..hd {
                dh_prev[i] = dh_prev[i] + wh[i] * gh;
                dwh[i] = dwh[i] + cache.h[i] * gh;
            }
        }
        (dx, dh_prev)
    }
}
