//! Fixed-topology layers with hand-written backward passes.
//!
//! Convolution and batch-norm activations use a channel-major layout
//! `[C, N·H·W]` so that each channel is one contiguous row; the input batch
//! arrives sample-major `[N, C, H, W]` and is transposed once.

use rand::Rng;

use super::tensor::{gemm, Tensor};

/// Spatial extent shared by every convolution stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Plane {
    pub n: usize,
    pub h: usize,
    pub w: usize,
}

impl Plane {
    pub fn hw(&self) -> usize {
        self.h * self.w
    }

    pub fn m(&self) -> usize {
        self.n * self.h * self.w
    }
}

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

/// `[N, C, H, W]` → `[C, N·H·W]`.
pub fn to_channel_major(x: &[f64], c: usize, p: Plane) -> Vec<f64> {
    let hw = p.hw();
    let mut out = vec![0.0; c * p.m()];
    for n in 0..p.n {
        for ch in 0..c {
            let src = &x[(n * c + ch) * hw..(n * c + ch + 1) * hw];
            out[ch * p.m() + n * hw..ch * p.m() + (n + 1) * hw].copy_from_slice(src);
        }
    }
    out
}

/// Patch matrix `[C·9, N·H·W]` for a 3×3, pad-1, stride-1 convolution.
pub fn im2col(x: &[f64], c: usize, p: Plane) -> Vec<f64> {
    let (h, w, m) = (p.h as isize, p.w as isize, p.m());
    let mut cols = vec![0.0; c * TAPS * m];
    for ch in 0..c {
        let plane = &x[ch * m..(ch + 1) * m];
        for ky in 0..KERNEL as isize {
            for kx in 0..KERNEL as isize {
                let row = (ch * TAPS) + (ky as usize) * KERNEL + kx as usize;
                let dst = &mut cols[row * m..(row + 1) * m];
                for n in 0..p.n {
                    let base = n * p.hw();
                    for y in 0..h {
                        let sy = y + ky - 1;
                        if sy < 0 || sy >= h {
                            continue;
                        }
                        for xx in 0..w {
                            let sx = xx + kx - 1;
                            if sx < 0 || sx >= w {
                                continue;
                            }
                            dst[base + (y * w + xx) as usize] =
                                plane[base + (sy * w + sx) as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
pub fn col2im(cols: &[f64], c: usize, p: Plane) -> Vec<f64> {
    let (h, w, m) = (p.h as isize, p.w as isize, p.m());
    let mut x = vec![0.0; c * m];
    for ch in 0..c {
        for ky in 0..KERNEL as isize {
            for kx in 0..KERNEL as isize {
                let row = (ch * TAPS) + (ky as usize) * KERNEL + kx as usize;
                let src = &cols[row * m..(row + 1) * m];
                let plane = &mut x[ch * m..(ch + 1) * m];
                for n in 0..p.n {
                    let base = n * p.hw();
                    for y in 0..h {
                        let sy = y + ky - 1;
                        if sy < 0 || sy >= h {
                            continue;
                        }
                        for xx in 0..w {
                            let sx = xx + kx - 1;
                            if sx < 0 || sx >= w {
                                continue;
                            }
                            plane[base + (sy * w + sx) as usize] +=
                                src[base + (y * w + xx) as usize];
                        }
                    }
                }
            }
        }
    }
    x
}

fn he_uniform<R: Rng + ?Sized>(t: &mut Tensor, fan_in: usize, rng: &mut R) {
    let bound = (6.0 / fan_in as f64).sqrt();
    for v in t.data_mut() {
        *v = rng.random_range(-bound..bound);
    }
}

/// 3×3 convolution, padding 1, stride 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub weight: Tensor, // [out, in, 3, 3]
    pub bias: Tensor,   // [out]
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(in_c: usize, out_c: usize, rng: &mut R) -> Self {
        let mut weight = Tensor::zeros(&[out_c, in_c, KERNEL, KERNEL]);
        he_uniform(&mut weight, in_c * TAPS, rng);
        Self { weight, bias: Tensor::zeros(&[out_c]) }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Returns `[out, N·H·W]` given the patch matrix of the input.
    pub fn forward(&self, cols: &[f64], p: Plane) -> Vec<f64> {
        let (out_c, k, m) = (self.out_channels(), self.in_channels() * TAPS, p.m());
        let mut z = vec![0.0; out_c * m];
        for (o, row) in z.chunks_mut(m).enumerate() {
            row.fill(self.bias.data()[o]);
        }
        gemm(false, false, out_c, m, k, self.weight.data(), cols, 1.0, &mut z);
        z
    }

    /// Accumulates weight/bias gradients; returns the patch-matrix gradient
    /// when `need_input_grad` is set.
    pub fn backward(
        &self,
        cols: &[f64],
        dz: &[f64],
        p: Plane,
        dweight: &mut Tensor,
        dbias: &mut Tensor,
        need_input_grad: bool,
    ) -> Option<Vec<f64>> {
        let (out_c, k, m) = (self.out_channels(), self.in_channels() * TAPS, p.m());
        gemm(false, true, out_c, k, m, dz, cols, 1.0, dweight.data_mut());
        for (o, row) in dz.chunks(m).enumerate() {
            dbias.data_mut()[o] += row.iter().sum::<f64>();
        }
        need_input_grad.then(|| {
            let mut dcols = vec![0.0; k * m];
            gemm(true, false, k, m, out_c, self.weight.data(), dz, 0.0, &mut dcols);
            dcols
        })
    }
}

/// Per-channel batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// What the backward pass needs from a training-mode batch-norm forward.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(c: usize) -> Self {
        Self {
            gamma: Tensor::filled(&[c], 1.0),
            beta: Tensor::zeros(&[c]),
            running_mean: Tensor::zeros(&[c]),
            running_var: Tensor::filled(&[c], 1.0),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Normalizes with batch statistics.
    pub fn forward_train(&self, x: &[f64], m: usize) -> (Vec<f64>, BnCache) {
        let c = self.channels();
        let mut y = vec![0.0; c * m];
        let mut cache = BnCache {
            xhat: vec![0.0; c * m],
            inv_std: vec![0.0; c],
            mean: vec![0.0; c],
            var: vec![0.0; c],
        };
        for ch in 0..c {
            let xs = &x[ch * m..(ch + 1) * m];
            let mean = xs.iter().sum::<f64>() / m as f64;
            let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let inv_std = 1.0 / (var + BN_EPS).sqrt();
            let (g, b) = (self.gamma.data()[ch], self.beta.data()[ch]);
            for i in 0..m {
                let xh = (xs[i] - mean) * inv_std;
                cache.xhat[ch * m + i] = xh;
                y[ch * m + i] = g * xh + b;
            }
            cache.mean[ch] = mean;
            cache.var[ch] = var;
            cache.inv_std[ch] = inv_std;
        }
        (y, cache)
    }

    /// Normalizes with the frozen running statistics.
    pub fn forward_eval(&self, x: &[f64], m: usize) -> Vec<f64> {
        let mut y = x.to_vec();
        for ch in 0..self.channels() {
            let inv_std = 1.0 / (self.running_var.data()[ch] + BN_EPS).sqrt();
            let scale = self.gamma.data()[ch] * inv_std;
            let shift = self.beta.data()[ch] - self.running_mean.data()[ch] * scale;
            for v in &mut y[ch * m..(ch + 1) * m] {
                *v = *v * scale + shift;
            }
        }
        y
    }

    pub fn update_running(&mut self, cache: &BnCache, m: usize) {
        let unbias = if m > 1 { m as f64 / (m as f64 - 1.0) } else { 1.0 };
        for ch in 0..self.channels() {
            let rm = &mut self.running_mean.data_mut()[ch];
            *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * cache.mean[ch];
            let rv = &mut self.running_var.data_mut()[ch];
            *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * cache.var[ch] * unbias;
        }
    }

    pub fn backward(
        &self,
        cache: &BnCache,
        dy: &[f64],
        m: usize,
        dgamma: &mut Tensor,
        dbeta: &mut Tensor,
    ) -> Vec<f64> {
        let c = self.channels();
        let mut dx = vec![0.0; c * m];
        let mf = m as f64;
        for ch in 0..c {
            let dys = &dy[ch * m..(ch + 1) * m];
            let xh = &cache.xhat[ch * m..(ch + 1) * m];
            let sum_dy: f64 = dys.iter().sum();
            let sum_dy_xh: f64 = dys.iter().zip(xh).map(|(a, b)| a * b).sum();
            dgamma.data_mut()[ch] += sum_dy_xh;
            dbeta.data_mut()[ch] += sum_dy;
            let g = self.gamma.data()[ch];
            let k = g * cache.inv_std[ch] / mf;
            for i in 0..m {
                dx[ch * m + i] = k * (mf * dys[i] - sum_dy - xh[i] * sum_dy_xh);
            }
        }
        dx
    }
}

/// Fully connected layer, `y = x·Wᵀ + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor, // [out, in]
    pub bias: Tensor,   // [out]
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let mut weight = Tensor::zeros(&[outputs, inputs]);
        he_uniform(&mut weight, inputs, rng);
        Self { weight, bias: Tensor::zeros(&[outputs]) }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &[f64], n: usize) -> Vec<f64> {
        let (i, o) = (self.inputs(), self.outputs());
        let mut y = vec![0.0; n * o];
        for row in y.chunks_mut(o) {
            row.copy_from_slice(self.bias.data());
        }
        gemm(false, true, n, o, i, x, self.weight.data(), 1.0, &mut y);
        y
    }

    pub fn backward(
        &self,
        x: &[f64],
        dy: &[f64],
        n: usize,
        dweight: &mut Tensor,
        dbias: &mut Tensor,
    ) -> Vec<f64> {
        let (i, o) = (self.inputs(), self.outputs());
        gemm(true, false, o, i, n, dy, x, 1.0, dweight.data_mut());
        for row in dy.chunks(o) {
            for (db, g) in dbias.data_mut().iter_mut().zip(row) {
                *db += g;
            }
        }
        let mut dx = vec![0.0; n * i];
        gemm(false, false, n, i, o, dy, self.weight.data(), 0.0, &mut dx);
        dx
    }
}

pub fn relu_inplace(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes `grad` wherever the forward output was not positive.
pub fn relu_backward(out: &[f64], grad: &mut [f64]) {
    for (g, &o) in grad.iter_mut().zip(out) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}
