//! Layer primitives with explicit forward/backward passes.
//!
//! Layers are stateless with respect to activations: `forward` returns the
//! output, `backward` takes the saved input (and output where convenient)
//! plus the upstream gradient and returns input and parameter gradients.
//! Batching happens above this level, one sample at a time.

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::num::{real, Real};
use crate::rng;

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Fully connected layer: `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    /// [out, in]
    pub w: Tensor<T>,
    /// [out]
    pub b: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct DenseGrads<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Real> Dense<T> {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut rng::Stream) -> Self {
        // He-style init scaled for ELU-ish activations.
        let std = (2.0 / in_dim as f64).sqrt();
        Self {
            w: Tensor::randn(&[out_dim, in_dim], std, rng),
            b: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape[1]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape[0]
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        let (out, inp) = (self.out_dim(), self.in_dim());
        if x.len() != inp {
            return Err(Error::ShapeMismatch(format!(
                "dense expects input {inp}, got {}",
                x.len()
            )));
        }
        let mut y = vec![T::zero(); out];
        for o in 0..out {
            let row = &self.w.data[o * inp..(o + 1) * inp];
            let mut acc = self.b.data[o];
            for i in 0..inp {
                acc = acc + row[i] * x[i];
            }
            y[o] = acc;
        }
        Ok(y)
    }

    pub fn backward(&self, x: &[T], dy: &[T]) -> (Vec<T>, DenseGrads<T>) {
        let (out, inp) = (self.out_dim(), self.in_dim());
        let mut dx = vec![T::zero(); inp];
        let mut dw = Tensor::zeros(&self.w.shape);
        let mut db = Tensor::zeros(&self.b.shape);
        for o in 0..out {
            let g = dy[o];
            db.data[o] = g;
            let row = &self.w.data[o * inp..(o + 1) * inp];
            let drow = &mut dw.data[o * inp..(o + 1) * inp];
            for i in 0..inp {
                dx[i] = dx[i] + row[i] * g;
                drow[i] = x[i] * g;
            }
        }
        (dx, DenseGrads { w: dw, b: db })
    }

    /// Accumulate parameter gradients into an existing buffer (for batched
    /// or through-time accumulation).
    pub fn backward_acc(&self, x: &[T], dy: &[T], acc: &mut DenseGrads<T>) -> Vec<T> {
        let (out, inp) = (self.out_dim(), self.in_dim());
        let mut dx = vec![T::zero(); inp];
        for o in 0..out {
            let g = dy[o];
            acc.b.data[o] = acc.b.data[o] + g;
            let row = &self.w.data[o * inp..(o + 1) * inp];
            let drow = &mut acc.w.data[o * inp..(o + 1) * inp];
            for i in 0..inp {
                dx[i] = dx[i] + row[i] * g;
                drow[i] = drow[i] + x[i] * g;
            }
        }
        dx
    }

    pub fn grads_zero(&self) -> DenseGrads<T> {
        DenseGrads {
            w: Tensor::zeros(&self.w.shape),
            b: Tensor::zeros(&self.b.shape),
        }
    }
}

/// ELU activation (alpha = 1).
pub fn elu<T: Real>(x: &[T]) -> Vec<T> {
    x.iter()
        .map(|&v| if v > T::zero() { v } else { v.exp() - T::one() })
        .collect()
}

/// Gradient of ELU given the saved input.
pub fn elu_backward<T: Real>(x: &[T], dy: &[T]) -> Vec<T> {
    x.iter()
        .zip(dy)
        .map(|(&v, &g)| if v > T::zero() { g } else { g * v.exp() })
        .collect()
}

/// 2D convolution over [C, H, W] tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    /// [out_c, in_c, kh, kw]
    pub w: Tensor<T>,
    /// [out_c]
    pub b: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut rng::Stream,
    ) -> Self {
        let fan_in = in_c * kernel * kernel;
        let std = (2.0 / fan_in as f64).sqrt();
        Self {
            w: Tensor::randn(&[out_c, in_c, kernel, kernel], std, rng),
            b: Tensor::zeros(&[out_c]),
            stride,
            padding,
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.w.shape[2];
        (
            (h + 2 * self.padding - k) / self.stride + 1,
            (w + 2 * self.padding - k) / self.stride + 1,
        )
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [out_c, in_c, kh, kw] = [
            self.w.shape[0],
            self.w.shape[1],
            self.w.shape[2],
            self.w.shape[3],
        ];
        if x.shape.len() != 3 || x.shape[0] != in_c {
            return Err(Error::ShapeMismatch(format!(
                "conv2d expects [{in_c}, h, w], got {:?}",
                x.shape
            )));
        }
        let (h, w) = (x.shape[1], x.shape[2]);
        let (oh, ow) = self.out_size(h, w);
        let mut y = Tensor::zeros(&[out_c, oh, ow]);
        let p = self.padding as isize;
        let s = self.stride;
        for oc in 0..out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = self.b.data[oc];
                    for ic in 0..in_c {
                        let xin = &x.data[ic * h * w..(ic + 1) * h * w];
                        let wk = &self.w.data
                            [((oc * in_c + ic) * kh) * kw..((oc * in_c + ic) * kh + kh) * kw];
                        for ky in 0..kh {
                            let iy = (oy * s) as isize + ky as isize - p;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = &xin[iy as usize * w..(iy as usize + 1) * w];
                            let wrow = &wk[ky * kw..(ky + 1) * kw];
                            for kx in 0..kw {
                                let ix = (ox * s) as isize + kx as isize - p;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc = acc + row[ix as usize] * wrow[kx];
                            }
                        }
                    }
                    y.data[(oc * oh + oy) * ow + ox] = acc;
                }
            }
        }
        Ok(y)
    }

    pub fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>) -> (Tensor<T>, ConvGrads<T>) {
        let mut grads = ConvGrads {
            w: Tensor::zeros(&self.w.shape),
            b: Tensor::zeros(&self.b.shape),
        };
        let dx = self.backward_acc(x, dy, &mut grads);
        (dx, grads)
    }

    pub fn backward_acc(&self, x: &Tensor<T>, dy: &Tensor<T>, acc: &mut ConvGrads<T>) -> Tensor<T> {
        let [out_c, in_c, kh, kw] = [
            self.w.shape[0],
            self.w.shape[1],
            self.w.shape[2],
            self.w.shape[3],
        ];
        let (h, w) = (x.shape[1], x.shape[2]);
        let (oh, ow) = (dy.shape[1], dy.shape[2]);
        let mut dx = x.zeros_like();
        let p = self.padding as isize;
        let s = self.stride;
        for oc in 0..out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = dy.data[(oc * oh + oy) * ow + ox];
                    acc.b.data[oc] = acc.b.data[oc] + g;
                    for ic in 0..in_c {
                        let xin = &x.data[ic * h * w..(ic + 1) * h * w];
                        let dxin = ic * h * w;
                        let wbase = ((oc * in_c + ic) * kh) * kw;
                        for ky in 0..kh {
                            let iy = (oy * s) as isize + ky as isize - p;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * s) as isize + kx as isize - p;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let xi = iy as usize * w + ix as usize;
                                let wi = wbase + ky * kw + kx;
                                acc.w.data[wi] = acc.w.data[wi] + xin[xi] * g;
                                dx.data[dxin + xi] = dx.data[dxin + xi] + self.w.data[wi] * g;
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Transposed 2D convolution over [C, H, W] tensors (fractional stride
/// upsampling). Weight layout [in_c, out_c, kh, kw], PyTorch-style.
#[derive(Debug, Clone, PartialEq)]
pub struct TransposeConv2d<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: (usize, usize),
}

impl<T: Real> TransposeConv2d<T> {
    pub fn new(
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: (usize, usize),
        rng: &mut rng::Stream,
    ) -> Self {
        let fan_in = in_c * kernel * kernel;
        let std = (2.0 / fan_in as f64).sqrt();
        Self {
            w: Tensor::randn(&[in_c, out_c, kernel, kernel], std, rng),
            b: Tensor::zeros(&[out_c]),
            stride,
            padding,
            output_padding,
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.w.shape[2];
        (
            (h - 1) * self.stride + k - 2 * self.padding + self.output_padding.0,
            (w - 1) * self.stride + k - 2 * self.padding + self.output_padding.1,
        )
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [in_c, out_c, kh, kw] = [
            self.w.shape[0],
            self.w.shape[1],
            self.w.shape[2],
            self.w.shape[3],
        ];
        if x.shape.len() != 3 || x.shape[0] != in_c {
            return Err(Error::ShapeMismatch(format!(
                "transpose_conv2d expects [{in_c}, h, w], got {:?}",
                x.shape
            )));
        }
        let (h, w) = (x.shape[1], x.shape[2]);
        let (oh, ow) = self.out_size(h, w);
        let mut y = Tensor::zeros(&[out_c, oh, ow]);
        for oc in 0..out_c {
            let base = oc * oh * ow;
            for i in 0..oh * ow {
                y.data[base + i] = self.b.data[oc];
            }
        }
        let p = self.padding as isize;
        for ic in 0..in_c {
            let xin = &x.data[ic * h * w..(ic + 1) * h * w];
            for iy in 0..h {
                for ix in 0..w {
                    let v = xin[iy * w + ix];
                    if v == T::zero() {
                        continue;
                    }
                    for oc in 0..out_c {
                        let wbase = ((ic * out_c + oc) * kh) * kw;
                        let ybase = oc * oh * ow;
                        for ky in 0..kh {
                            let oy = (iy * self.stride) as isize + ky as isize - p;
                            if oy < 0 || oy >= oh as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ox = (ix * self.stride) as isize + kx as isize - p;
                                if ox < 0 || ox >= ow as isize {
                                    continue;
                                }
                                let yi = ybase + oy as usize * ow + ox as usize;
                                y.data[yi] = y.data[yi] + v * self.w.data[wbase + ky * kw + kx];
                            }
                        }
                    }
                }
            }
        }
        Ok(y)
    }

    pub fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>) -> (Tensor<T>, ConvGrads<T>) {
        let mut grads = ConvGrads {
            w: Tensor::zeros(&self.w.shape),
            b: Tensor::zeros(&self.b.shape),
        };
        let dx = self.backward_acc(x, dy, &mut grads);
        (dx, grads)
    }

    pub fn backward_acc(&self, x: &Tensor<T>, dy: &Tensor<T>, acc: &mut ConvGrads<T>) -> Tensor<T> {
        let [in_c, out_c, kh, kw] = [
            self.w.shape[0],
            self.w.shape[1],
            self.w.shape[2],
            self.w.shape[3],
        ];
        let (h, w) = (x.shape[1], x.shape[2]);
        let (oh, ow) = (dy.shape[1], dy.shape[2]);
        let mut dx = x.zeros_like();
        let p = self.padding as isize;

        for oc in 0..out_c {
            let base = oc * oh * ow;
            let mut acc_b = acc.b.data[oc];
            for i in 0..oh * ow {
                acc_b = acc_b + dy.data[base + i];
            }
            acc.b.data[oc] = acc_b;
        }

        for ic in 0..in_c {
            let xin = &x.data[ic * h * w..(ic + 1) * h * w];
            let dxin = ic * h * w;
            for iy in 0..h {
                for ix in 0..w {
                    let v = xin[iy * w + ix];
                    let mut dv = T::zero();
                    for oc in 0..out_c {
                        let wbase = ((ic * out_c + oc) * kh) * kw;
                        let ybase = oc * oh * ow;
                        for ky in 0..kh {
                            let oy = (iy * self.stride) as isize + ky as isize - p;
                            if oy < 0 || oy >= oh as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ox = (ix * self.stride) as isize + kx as isize - p;
                                if ox < 0 || ox >= ow as isize {
                                    continue;
                                }
                                let g = dy.data[ybase + oy as usize * ow + ox as usize];
                                let wi = wbase + ky * kw + kx;
                                dv = dv + self.w.data[wi] * g;
                                acc.w.data[wi] = acc.w.data[wi] + v * g;
                            }
                        }
                    }
                    dx.data[dxin + iy * w + ix] = dv;
                }
            }
        }
        dx
    }
}

/// Reparameterized Gaussian sampling: `z = mu + exp(0.5 logvar) * eps` with
/// externally supplied noise.
pub fn gaussian_sample<T: Real>(mu: &[T], logvar: &[T], eps: &[T]) -> Vec<T> {
    let half = real::<T>(0.5);
    mu.iter()
        .zip(logvar)
        .zip(eps)
        .map(|((&m, &lv), &e)| m + (half * lv).exp() * e)
        .collect()
}

/// Gradients of [`gaussian_sample`] with respect to mu and logvar.
pub fn gaussian_sample_backward<T: Real>(
    logvar: &[T],
    eps: &[T],
    dz: &[T],
) -> (Vec<T>, Vec<T>) {
    let half = real::<T>(0.5);
    let dmu = dz.to_vec();
    let dlogvar = logvar
        .iter()
        .zip(eps)
        .zip(dz)
        .map(|((&lv, &e), &g)| g * e * half * (half * lv).exp())
        .collect();
    (dmu, dlogvar)
}
