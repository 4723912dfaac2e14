//! Forward/backward layer kernels over NCHW tensors.
//!
//! Every layer is a pure function of explicit parameter state plus a forward
//! cache; backward passes take the cache and the upstream gradient and return
//! the input gradient together with parameter gradients. There is no shared
//! mutable state, so independent model instances can run on separate threads.

use rayon::prelude::*;

use super::Tensor;
use crate::error::{Error, Result};

/// Leaky-ReLU negative slope used by the hybrid backend.
pub const LEAKY_SLOPE: f64 = 0.01;

fn he_uniform(fan_in: usize, rng: &mut impl rand::Rng) -> f64 {
    let limit = (6.0 / fan_in as f64).sqrt();
    rng.random::<f64>() * 2.0 * limit - limit
}

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

/// 2-D cross-correlation with stride 1. Kernel size 3 uses padding 1 so the
/// spatial extent is preserved; kernel size 1 uses no padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug)]
pub struct Conv2dCache {
    input: Tensor,
}

#[derive(Debug)]
pub struct Conv2dGrads {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut impl rand::Rng,
    ) -> Result<Self> {
        if kernel != 1 && kernel != 3 {
            return Err(Error::Config(format!(
                "unsupported kernel size {kernel} (expected 1 or 3)"
            )));
        }
        let fan_in = in_channels * kernel * kernel;
        let weight = Tensor::from_vec(
            &[out_channels, in_channels, kernel, kernel],
            (0..out_channels * fan_in)
                .map(|_| he_uniform(fan_in, rng))
                .collect(),
        )?;
        Ok(Conv2d {
            in_channels,
            out_channels,
            kernel,
            weight,
            bias: Tensor::zeros(&[out_channels]),
        })
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    fn pad(&self) -> usize {
        if self.kernel == 3 {
            1
        } else {
            0
        }
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, Conv2dCache)> {
        let [n, c, h, w] = dims4(input)?;
        if c != self.in_channels {
            return Err(Error::Config(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let k = self.kernel;
        let pad = self.pad() as isize;
        let oc_n = self.out_channels;
        let mut out = Tensor::zeros(&[n, oc_n, h, w]);
        let in_plane = h * w;
        let out_sample = oc_n * in_plane;

        let weight = self.weight.data();
        let bias = self.bias.data();
        let in_data = input.data();
        out.data_mut()
            .par_chunks_mut(out_sample)
            .enumerate()
            .for_each(|(s, out_s)| {
                let in_s = &in_data[s * c * in_plane..(s + 1) * c * in_plane];
                for oc in 0..oc_n {
                    let out_c = &mut out_s[oc * in_plane..(oc + 1) * in_plane];
                    out_c.fill(bias[oc]);
                    for ic in 0..c {
                        let in_c = &in_s[ic * in_plane..(ic + 1) * in_plane];
                        let w_base = ((oc * c) + ic) * k * k;
                        for ky in 0..k {
                            for kx in 0..k {
                                let wv = weight[w_base + ky * k + kx];
                                let dy = ky as isize - pad;
                                let dx = kx as isize - pad;
                                accumulate_shifted(out_c, in_c, h, w, dy, dx, wv);
                            }
                        }
                    }
                }
            });

        Ok((
            out,
            Conv2dCache {
                input: input.clone(),
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &Conv2dCache,
        grad_out: &Tensor,
    ) -> Result<(Tensor, Conv2dGrads)> {
        let [n, c, h, w] = dims4(&cache.input)?;
        let [gn, goc, gh, gw] = dims4(grad_out)?;
        if gn != n || goc != self.out_channels || gh != h || gw != w {
            return Err(Error::Config(format!(
                "grad_out shape {:?} does not match conv output",
                grad_out.shape()
            )));
        }
        let k = self.kernel;
        let pad = self.pad() as isize;
        let plane = h * w;
        let in_data = cache.input.data();
        let go_data = grad_out.data();
        let weight = self.weight.data();

        // grad wrt input: correlation of grad_out with the flipped kernel.
        let mut grad_input = Tensor::zeros(&[n, c, h, w]);
        grad_input
            .data_mut()
            .par_chunks_mut(c * plane)
            .enumerate()
            .for_each(|(s, gi_s)| {
                let go_s = &go_data[s * self.out_channels * plane..(s + 1) * self.out_channels * plane];
                for ic in 0..c {
                    let gi_c = &mut gi_s[ic * plane..(ic + 1) * plane];
                    for oc in 0..self.out_channels {
                        let go_c = &go_s[oc * plane..(oc + 1) * plane];
                        let w_base = ((oc * c) + ic) * k * k;
                        for ky in 0..k {
                            for kx in 0..k {
                                let wv = weight[w_base + ky * k + kx];
                                // input pixel (y, x) contributed to output (y - dy, x - dx)
                                let dy = pad - ky as isize;
                                let dx = pad - kx as isize;
                                accumulate_shifted(gi_c, go_c, h, w, dy, dx, wv);
                            }
                        }
                    }
                }
            });

        // grad wrt weights, parallel over output channels so the accumulation
        // order per weight element stays fixed.
        let mut grad_weight = Tensor::zeros(self.weight.shape());
        let per_oc = c * k * k;
        grad_weight
            .data_mut()
            .par_chunks_mut(per_oc)
            .enumerate()
            .for_each(|(oc, gw_c)| {
                for s in 0..n {
                    let go_c = &go_data[(s * self.out_channels + oc) * plane..][..plane];
                    for ic in 0..c {
                        let in_c = &in_data[(s * c + ic) * plane..][..plane];
                        for ky in 0..k {
                            for kx in 0..k {
                                let dy = ky as isize - pad;
                                let dx = kx as isize - pad;
                                gw_c[ic * k * k + ky * k + kx] +=
                                    dot_shifted(go_c, in_c, h, w, dy, dx);
                            }
                        }
                    }
                }
            });

        let mut grad_bias = Tensor::zeros(&[self.out_channels]);
        for s in 0..n {
            for oc in 0..self.out_channels {
                let go_c = &go_data[(s * self.out_channels + oc) * plane..][..plane];
                grad_bias.data_mut()[oc] += go_c.iter().sum::<f64>();
            }
        }

        Ok((
            grad_input,
            Conv2dGrads {
                weight: grad_weight,
                bias: grad_bias,
            },
        ))
    }
}

/// out[y][x] += wv * src[y + dy][x + dx] over the in-bounds window.
fn accumulate_shifted(out: &mut [f64], src: &[f64], h: usize, w: usize, dy: isize, dx: isize, wv: f64) {
    let (y0, y1) = shifted_range(h, dy);
    let (x0, x1) = shifted_range(w, dx);
    if y0 >= y1 || x0 >= x1 {
        return;
    }
    for y in y0..y1 {
        let sy = (y as isize + dy) as usize;
        let orow = &mut out[y * w + x0..y * w + x1];
        let srow = &src[sy * w + (x0 as isize + dx) as usize..][..x1 - x0];
        for (o, &v) in orow.iter_mut().zip(srow) {
            *o += wv * v;
        }
    }
}

/// sum over (y, x) of a[y][x] * b[y + dy][x + dx] over the in-bounds window.
fn dot_shifted(a: &[f64], b: &[f64], h: usize, w: usize, dy: isize, dx: isize) -> f64 {
    let (y0, y1) = shifted_range(h, dy);
    let (x0, x1) = shifted_range(w, dx);
    let mut acc = 0.0;
    if y0 >= y1 || x0 >= x1 {
        return acc;
    }
    for y in y0..y1 {
        let sy = (y as isize + dy) as usize;
        let arow = &a[y * w + x0..y * w + x1];
        let brow = &b[sy * w + (x0 as isize + dx) as usize..][..x1 - x0];
        acc += arow.iter().zip(brow).map(|(&x, &y)| x * y).sum::<f64>();
    }
    acc
}

fn shifted_range(extent: usize, d: isize) -> (usize, usize) {
    let lo = if d < 0 { (-d) as usize } else { 0 };
    let hi = if d > 0 {
        extent.saturating_sub(d as usize)
    } else {
        extent
    };
    (lo, hi)
}

fn dims4(t: &Tensor) -> Result<[usize; 4]> {
    match t.shape() {
        [a, b, c, d] => Ok([*a, *b, *c, *d]),
        other => Err(Error::Config(format!("expected rank-4 tensor, got {other:?}"))),
    }
}

fn dims2(t: &Tensor) -> Result<[usize; 2]> {
    match t.shape() {
        [a, b] => Ok([*a, *b]),
        other => Err(Error::Config(format!("expected rank-2 tensor, got {other:?}"))),
    }
}

// ---------------------------------------------------------------------------
// BatchNorm2d
// ---------------------------------------------------------------------------

/// Per-channel batch normalization with learned scale/shift and running
/// statistics for inference mode.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    eps: f64,
    momentum: f64,
}

#[derive(Debug)]
pub struct BatchNormCache {
    x_hat: Tensor,
    inv_std: Vec<f64>,
}

#[derive(Debug)]
pub struct BatchNormGrads {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Tensor::filled(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], 1.0),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Training-mode forward: normalizes by batch statistics and folds them
    /// into the running estimates. Requires batch size >= 2.
    pub fn forward_train(&mut self, input: &Tensor) -> Result<(Tensor, BatchNormCache)> {
        let [n, c, h, w] = dims4(input)?;
        if n < 2 {
            return Err(Error::Config(
                "batch normalization in training mode requires batch size >= 2".into(),
            ));
        }
        if c != self.channels() {
            return Err(Error::Config(format!(
                "batchnorm expects {} channels, got {c}",
                self.channels()
            )));
        }
        let plane = h * w;
        let m = (n * plane) as f64;
        let mut out = Tensor::zeros(input.shape());
        let mut x_hat = Tensor::zeros(input.shape());
        let mut inv_std = vec![0.0; c];

        for ch in 0..c {
            let mut mean = 0.0;
            for s in 0..n {
                let row = &input.data()[(s * c + ch) * plane..][..plane];
                mean += row.iter().sum::<f64>();
            }
            mean /= m;
            let mut var = 0.0;
            for s in 0..n {
                let row = &input.data()[(s * c + ch) * plane..][..plane];
                var += row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>();
            }
            var /= m;
            let istd = 1.0 / (var + self.eps).sqrt();
            inv_std[ch] = istd;

            let g = self.gamma.data()[ch];
            let b = self.beta.data()[ch];
            for s in 0..n {
                let base = (s * c + ch) * plane;
                for i in 0..plane {
                    let xh = (input.data()[base + i] - mean) * istd;
                    x_hat.data_mut()[base + i] = xh;
                    out.data_mut()[base + i] = g * xh + b;
                }
            }

            let rm = &mut self.running_mean.data_mut()[ch];
            *rm = (1.0 - self.momentum) * *rm + self.momentum * mean;
            let rv = &mut self.running_var.data_mut()[ch];
            *rv = (1.0 - self.momentum) * *rv + self.momentum * var;
        }

        Ok((out, BatchNormCache { x_hat, inv_std }))
    }

    /// Inference-mode forward using the running statistics.
    pub fn forward_eval(&self, input: &Tensor) -> Result<Tensor> {
        let [n, c, h, w] = dims4(input)?;
        if c != self.channels() {
            return Err(Error::Config(format!(
                "batchnorm expects {} channels, got {c}",
                self.channels()
            )));
        }
        let plane = h * w;
        let mut out = Tensor::zeros(input.shape());
        for ch in 0..c {
            let mean = self.running_mean.data()[ch];
            let istd = 1.0 / (self.running_var.data()[ch] + self.eps).sqrt();
            let g = self.gamma.data()[ch];
            let b = self.beta.data()[ch];
            for s in 0..n {
                let base = (s * c + ch) * plane;
                for i in 0..plane {
                    out.data_mut()[base + i] = g * (input.data()[base + i] - mean) * istd + b;
                }
            }
        }
        Ok(out)
    }

    pub fn backward(
        &self,
        cache: &BatchNormCache,
        grad_out: &Tensor,
    ) -> Result<(Tensor, BatchNormGrads)> {
        let [n, c, h, w] = dims4(grad_out)?;
        let plane = h * w;
        let m = (n * plane) as f64;
        let mut grad_input = Tensor::zeros(grad_out.shape());
        let mut grad_gamma = Tensor::zeros(&[c]);
        let mut grad_beta = Tensor::zeros(&[c]);

        for ch in 0..c {
            let g = self.gamma.data()[ch];
            let istd = cache.inv_std[ch];

            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for s in 0..n {
                let base = (s * c + ch) * plane;
                for i in 0..plane {
                    let dy = grad_out.data()[base + i];
                    sum_dy += dy;
                    sum_dy_xhat += dy * cache.x_hat.data()[base + i];
                }
            }
            grad_beta.data_mut()[ch] = sum_dy;
            grad_gamma.data_mut()[ch] = sum_dy_xhat;

            // dx = (gamma * istd / m) * (m*dy - sum_dy - x_hat * sum_dy_xhat)
            let scale = g * istd / m;
            for s in 0..n {
                let base = (s * c + ch) * plane;
                for i in 0..plane {
                    let dy = grad_out.data()[base + i];
                    let xh = cache.x_hat.data()[base + i];
                    grad_input.data_mut()[base + i] =
                        scale * (m * dy - sum_dy - xh * sum_dy_xhat);
                }
            }
        }

        Ok((
            grad_input,
            BatchNormGrads {
                gamma: grad_gamma,
                beta: grad_beta,
            },
        ))
    }
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

/// Elementwise max(x, slope * x).
pub fn leaky_relu(input: &Tensor, slope: f64) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v *= slope;
        }
    }
    out
}

pub fn leaky_relu_backward(input: &Tensor, grad_out: &Tensor, slope: f64) -> Tensor {
    let mut grad = grad_out.clone();
    for (g, &x) in grad.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *g *= slope;
        }
    }
    grad
}

pub fn relu(input: &Tensor) -> Tensor {
    leaky_relu(input, 0.0)
}

pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    leaky_relu_backward(input, grad_out, 0.0)
}

// ---------------------------------------------------------------------------
// Max pooling (fixed 2x2, stride 2)
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct MaxPoolCache {
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

pub fn maxpool2x2_forward(input: &Tensor) -> Result<(Tensor, MaxPoolCache)> {
    let [n, c, h, w] = dims4(input)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Config(format!(
            "2x2 max-pool requires even spatial extents, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = vec![0usize; n * c * oh * ow];
    let data = input.data();
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * h * w;
            let obase = (s * c + ch) * oh * ow;
            for y in 0..oh {
                for x in 0..ow {
                    let mut best_idx = base + (2 * y) * w + 2 * x;
                    let mut best = data[best_idx];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * y + dy) * w + 2 * x + dx;
                        if data[idx] > best {
                            best = data[idx];
                            best_idx = idx;
                        }
                    }
                    out.data_mut()[obase + y * ow + x] = best;
                    argmax[obase + y * ow + x] = best_idx;
                }
            }
        }
    }
    Ok((
        out,
        MaxPoolCache {
            input_shape: input.shape().to_vec(),
            argmax,
        },
    ))
}

pub fn maxpool2x2_backward(cache: &MaxPoolCache, grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.len() != cache.argmax.len() {
        return Err(Error::Usage(
            "max-pool backward called with mismatched gradient".into(),
        ));
    }
    let mut grad_input = Tensor::zeros(&cache.input_shape);
    for (i, &src) in cache.argmax.iter().enumerate() {
        grad_input.data_mut()[src] += grad_out.data()[i];
    }
    Ok(grad_input)
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

/// Affine map `y = x W + b` over `[N, D]` inputs; weight is `[D, D']`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug)]
pub struct DenseCache {
    input: Tensor,
}

#[derive(Debug)]
pub struct DenseGrads {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl rand::Rng) -> Result<Self> {
        let weight = Tensor::from_vec(
            &[in_dim, out_dim],
            (0..in_dim * out_dim)
                .map(|_| he_uniform(in_dim, rng))
                .collect(),
        )?;
        Ok(Dense {
            weight,
            bias: Tensor::zeros(&[out_dim]),
        })
    }

    /// Identity-initialized layer, used by tests.
    pub fn identity(dim: usize) -> Self {
        let mut weight = Tensor::zeros(&[dim, dim]);
        for i in 0..dim {
            weight.data_mut()[i * dim + i] = 1.0;
        }
        Dense {
            weight,
            bias: Tensor::zeros(&[dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, DenseCache)> {
        let [n, d] = dims2(input)?;
        if d != self.in_dim() {
            return Err(Error::Config(format!(
                "dense expects input dim {}, got {d}",
                self.in_dim()
            )));
        }
        let dp = self.out_dim();
        let mut out = Tensor::zeros(&[n, dp]);
        let w = self.weight.data();
        let x = input.data();
        let b = self.bias.data();
        out.data_mut()
            .par_chunks_mut(dp)
            .enumerate()
            .for_each(|(s, orow)| {
                orow.copy_from_slice(b);
                let xrow = &x[s * d..(s + 1) * d];
                for (i, &xv) in xrow.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let wrow = &w[i * dp..(i + 1) * dp];
                    for (o, &wv) in orow.iter_mut().zip(wrow) {
                        *o += xv * wv;
                    }
                }
            });
        Ok((
            out,
            DenseCache {
                input: input.clone(),
            },
        ))
    }

    pub fn backward(&self, cache: &DenseCache, grad_out: &Tensor) -> Result<(Tensor, DenseGrads)> {
        let [n, d] = dims2(&cache.input)?;
        let [gn, gd] = dims2(grad_out)?;
        if gn != n || gd != self.out_dim() {
            return Err(Error::Config(format!(
                "grad_out shape {:?} does not match dense output",
                grad_out.shape()
            )));
        }
        let dp = self.out_dim();
        let x = cache.input.data();
        let go = grad_out.data();
        let w = self.weight.data();

        let mut grad_input = Tensor::zeros(&[n, d]);
        grad_input
            .data_mut()
            .par_chunks_mut(d)
            .enumerate()
            .for_each(|(s, girow)| {
                let grow = &go[s * dp..(s + 1) * dp];
                for (i, gi) in girow.iter_mut().enumerate() {
                    let wrow = &w[i * dp..(i + 1) * dp];
                    *gi = grow.iter().zip(wrow).map(|(&a, &b)| a * b).sum();
                }
            });

        let mut grad_weight = Tensor::zeros(&[d, dp]);
        grad_weight
            .data_mut()
            .par_chunks_mut(dp)
            .enumerate()
            .for_each(|(i, gwrow)| {
                for s in 0..n {
                    let xv = x[s * d + i];
                    if xv == 0.0 {
                        continue;
                    }
                    let grow = &go[s * dp..(s + 1) * dp];
                    for (gw, &g) in gwrow.iter_mut().zip(grow) {
                        *gw += xv * g;
                    }
                }
            });

        let mut grad_bias = Tensor::zeros(&[dp]);
        for s in 0..n {
            for j in 0..dp {
                grad_bias.data_mut()[j] += go[s * dp + j];
            }
        }

        Ok((
            grad_input,
            DenseGrads {
                weight: grad_weight,
                bias: grad_bias,
            },
        ))
    }
}

// ---------------------------------------------------------------------------
// Cross-entropy
// ---------------------------------------------------------------------------

/// Mean softmax cross-entropy over the batch, stabilized by per-row max
/// subtraction. Returns the loss and the gradient with respect to the logits.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let [n, m] = dims2(logits)?;
    if labels.len() != n {
        return Err(Error::Usage(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= m) {
        return Err(Error::Usage(format!(
            "label {bad} out of range for {m} classes"
        )));
    }
    let mut grad = Tensor::zeros(&[n, m]);
    let mut loss = 0.0;
    for s in 0..n {
        let row = &logits.data()[s * m..(s + 1) * m];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let log_sum = sum_exp.ln() + max;
        loss += log_sum - row[labels[s]];
        let grow = &mut grad.data_mut()[s * m..(s + 1) * m];
        for (j, g) in grow.iter_mut().enumerate() {
            let p = (row[j] - max).exp() / sum_exp;
            *g = (p - if j == labels[s] { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}
