use rand::Rng;
use rayon::prelude::*;

use super::init::kaiming_uniform;
use super::ops::{relu, relu_backward};
use super::{expect_rank, Mode, Module, NnError, Parameter};
use crate::scalar::{matmul_acc, matmul_at_acc, matmul_bt_acc};
use crate::{Scalar, Tensor};

const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

/// 3x3 convolution, stride 1, zero padding 1, over NCHW tensors.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
    in_channels: usize,
    out_channels: usize,
}

fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut cols[(ch * TAPS + ky * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (x_out, d) in dst.iter_mut().enumerate() {
                        let sx = x_out as isize + kx as isize - 1;
                        *d = if sx < 0 || sx >= w as isize {
                            T::zero()
                        } else {
                            src[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, dx: &mut [T]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &mut dx[ch * hw..(ch + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &cols[(ch * TAPS + ky * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x_out in 0..w {
                        let sx = x_out as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            plane[sy as usize * w + sx as usize] += row[y * w + x_out];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * TAPS;
        Self {
            weight: Parameter::new(
                format!("{name}.weight"),
                kaiming_uniform(&[out_channels, in_channels, KERNEL, KERNEL], fan_in, rng),
            ),
            bias: Parameter::zeros(format!("{name}.bias"), &[out_channels]),
            in_channels,
            out_channels,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(), NnError> {
        expect_rank("conv2d", x, 4)?;
        if x.dim(1) != self.in_channels {
            return Err(NnError::ShapeMismatch {
                op: "conv2d",
                expected: format!("{} input channels", self.in_channels),
                got: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        self.check_input(x)?;
        let (bs, cin, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let (cout, hw) = (self.out_channels, h * w);
        let mut out = Tensor::zeros(&[bs, cout, h, w]);
        let weight = self.weight.value.data();
        let bias = self.bias.value.data();
        out.data_mut()
            .par_chunks_mut(cout * hw)
            .zip(x.data().par_chunks(cin * hw))
            .for_each_init(
                || vec![T::zero(); cin * TAPS * hw],
                |cols, (y, xs)| {
                    im2col(xs, cin, h, w, cols);
                    for (o, &b) in bias.iter().enumerate() {
                        y[o * hw..(o + 1) * hw].iter_mut().for_each(|v| *v = b);
                    }
                    matmul_acc(cout, cin * TAPS, hw, weight, cols, y);
                },
            );
        Ok(out)
    }

    /// Accumulates weight and bias gradients; returns the input gradient.
    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
        let (bs, cin, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let (cout, hw) = (self.out_channels, h * w);
        let k = cin * TAPS;
        let weight = self.weight.value.data();
        let mut dx = Tensor::zeros(x.shape());
        let partials: Vec<(Vec<T>, Vec<T>)> = dx
            .data_mut()
            .par_chunks_mut(cin * hw)
            .zip(x.data().par_chunks(cin * hw))
            .zip(dy.data().par_chunks(cout * hw))
            .map(|((dxs, xs), dys)| {
                let mut cols = vec![T::zero(); k * hw];
                im2col(xs, cin, h, w, &mut cols);
                let mut dw = vec![T::zero(); cout * k];
                matmul_bt_acc(cout, hw, k, dys, &cols, &mut dw);
                let db: Vec<T> = dys.chunks(hw).map(|r| r.iter().copied().sum()).collect();
                cols.iter_mut().for_each(|v| *v = T::zero());
                matmul_at_acc(k, cout, hw, weight, dys, &mut cols);
                col2im(&cols, cin, h, w, dxs);
                (dw, db)
            })
            .collect();
        debug_assert_eq!(partials.len(), bs);
        // Ordered reduction keeps the result independent of thread count.
        for (dw, db) in partials {
            for (g, v) in self.weight.grad.data_mut().iter_mut().zip(dw) {
                *g += v;
            }
            for (g, v) in self.bias.grad.data_mut().iter_mut().zip(db) {
                *g += v;
            }
        }
        dx
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Per-channel batch normalisation over `(B, H, W)`.
#[derive(Clone, Debug)]
pub struct BatchNorm2d<T> {
    name: String,
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    /// Single-element counter of running-statistics updates.
    pub batches_tracked: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Clone, Debug)]
pub enum BatchNormCache<T> {
    Train { xhat: Tensor<T>, inv_std: Vec<T> },
    Eval { inv_std: Vec<T> },
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            name: name.to_string(),
            gamma: Parameter::new(format!("{name}.gamma"), Tensor::full(&[channels], T::one())),
            beta: Parameter::zeros(format!("{name}.beta"), &[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            batches_tracked: Tensor::zeros(&[1]),
            momentum: 0.9,
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_tracked(&self) -> bool {
        self.batches_tracked.data()[0] > T::zero()
    }

    /// Marks running statistics as valid, e.g. after setting them by hand.
    pub fn set_running_stats(&mut self, mean: &[T], var: &[T]) {
        self.running_mean.data_mut().copy_from_slice(mean);
        self.running_var.data_mut().copy_from_slice(var);
        self.batches_tracked.data_mut()[0] = T::one();
    }

    pub fn forward(
        &mut self,
        x: &Tensor<T>,
        mode: Mode,
    ) -> Result<(Tensor<T>, BatchNormCache<T>), NnError> {
        expect_rank("batch_norm", x, 4)?;
        let c = self.channels();
        if x.dim(1) != c {
            return Err(NnError::ShapeMismatch {
                op: "batch_norm",
                expected: format!("{c} channels"),
                got: x.shape().to_vec(),
            });
        }
        match mode {
            Mode::Train => Ok(self.forward_train(x)),
            Mode::Eval => self.forward_eval(x),
        }
    }

    fn forward_train(&mut self, x: &Tensor<T>) -> (Tensor<T>, BatchNormCache<T>) {
        let (bs, c) = (x.dim(0), x.dim(1));
        let plane = x.dim(2) * x.dim(3);
        let count = bs * plane;
        let n = T::lit(count as f64);
        let eps = T::lit(self.eps);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for b in 0..bs {
            for ch in 0..c {
                let p = &x.data()[(b * c + ch) * plane..][..plane];
                mean[ch] += p.iter().copied().sum::<T>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        for b in 0..bs {
            for ch in 0..c {
                let p = &x.data()[(b * c + ch) * plane..][..plane];
                let m = mean[ch];
                var[ch] += p.iter().map(|&v| (v - m) * (v - m)).sum::<T>();
            }
        }
        var.iter_mut().for_each(|v| *v /= n);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

        let mut xhat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        for b in 0..bs {
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                let (g, be) = (self.gamma.value.data()[ch], self.beta.value.data()[ch]);
                for i in off..off + plane {
                    let h = (x.data()[i] - mean[ch]) * inv_std[ch];
                    xhat.data_mut()[i] = h;
                    y.data_mut()[i] = g * h + be;
                }
            }
        }

        let keep = T::lit(self.momentum);
        let take = T::one() - keep;
        let unbias = if count > 1 {
            T::lit(count as f64 / (count - 1) as f64)
        } else {
            T::one()
        };
        for ch in 0..c {
            let rm = &mut self.running_mean.data_mut()[ch];
            *rm = keep * *rm + take * mean[ch];
            let rv = &mut self.running_var.data_mut()[ch];
            *rv = keep * *rv + take * var[ch] * unbias;
        }
        self.batches_tracked.data_mut()[0] += T::one();
        (y, BatchNormCache::Train { xhat, inv_std })
    }

    fn forward_eval(&self, x: &Tensor<T>) -> Result<(Tensor<T>, BatchNormCache<T>), NnError> {
        if !self.is_tracked() {
            return Err(NnError::UntrackedBatchNorm(self.name.clone()));
        }
        let (bs, c) = (x.dim(0), x.dim(1));
        let plane = x.dim(2) * x.dim(3);
        let eps = T::lit(self.eps);
        let inv_std: Vec<T> = self
            .running_var
            .data()
            .iter()
            .map(|&v| T::one() / (v + eps).sqrt())
            .collect();
        let mut y = x.clone();
        for b in 0..bs {
            for ch in 0..c {
                let scale = self.gamma.value.data()[ch] * inv_std[ch];
                let m = self.running_mean.data()[ch];
                let be = self.beta.value.data()[ch];
                for v in &mut y.data_mut()[(b * c + ch) * plane..][..plane] {
                    *v = (*v - m) * scale + be;
                }
            }
        }
        Ok((y, BatchNormCache::Eval { inv_std }))
    }

    pub fn backward(&mut self, cache: &BatchNormCache<T>, x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
        let (bs, c) = (dy.dim(0), dy.dim(1));
        let plane = dy.dim(2) * dy.dim(3);
        let mut dx = Tensor::zeros(dy.shape());
        match cache {
            BatchNormCache::Train { xhat, inv_std } => {
                let n = T::lit((bs * plane) as f64);
                let mut sum_dy = vec![T::zero(); c];
                let mut sum_dy_xhat = vec![T::zero(); c];
                for b in 0..bs {
                    for ch in 0..c {
                        let off = (b * c + ch) * plane;
                        for i in off..off + plane {
                            sum_dy[ch] += dy.data()[i];
                            sum_dy_xhat[ch] += dy.data()[i] * xhat.data()[i];
                        }
                    }
                }
                for ch in 0..c {
                    self.beta.grad.data_mut()[ch] += sum_dy[ch];
                    self.gamma.grad.data_mut()[ch] += sum_dy_xhat[ch];
                }
                for b in 0..bs {
                    for ch in 0..c {
                        let k = self.gamma.value.data()[ch] * inv_std[ch] / n;
                        let off = (b * c + ch) * plane;
                        for i in off..off + plane {
                            dx.data_mut()[i] = k
                                * (n * dy.data()[i]
                                    - sum_dy[ch]
                                    - xhat.data()[i] * sum_dy_xhat[ch]);
                        }
                    }
                }
            }
            BatchNormCache::Eval { inv_std } => {
                for b in 0..bs {
                    for ch in 0..c {
                        let m = self.running_mean.data()[ch];
                        let g = self.gamma.value.data()[ch];
                        let off = (b * c + ch) * plane;
                        for i in off..off + plane {
                            let d = dy.data()[i];
                            self.beta.grad.data_mut()[ch] += d;
                            self.gamma.grad.data_mut()[ch] += d * (x.data()[i] - m) * inv_std[ch];
                            dx.data_mut()[i] = d * g * inv_std[ch];
                        }
                    }
                }
            }
        }
        dx
    }
}

impl<T: Scalar> Module<T> for BatchNorm2d<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        f(&self.gamma);
        f(&self.beta);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&format!("{}.running_mean", self.name), &self.running_mean);
        f(&format!("{}.running_var", self.name), &self.running_var);
        f(&format!("{}.batches_tracked", self.name), &self.batches_tracked);
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{}.running_mean", self.name), &mut self.running_mean);
        f(&format!("{}.running_var", self.name), &mut self.running_var);
        f(&format!("{}.batches_tracked", self.name), &mut self.batches_tracked);
    }
}

/// Max pooling with non-overlapping `(time, freq)` windows; extents are floored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaxPool2d {
    pub pool_h: usize,
    pub pool_w: usize,
}

#[derive(Clone, Debug)]
pub struct PoolCache {
    input_shape: Vec<usize>,
    argmax: Option<Vec<usize>>,
}

impl MaxPool2d {
    pub fn new(pool_h: usize, pool_w: usize) -> Self {
        Self { pool_h, pool_w }
    }

    pub fn is_identity(&self) -> bool {
        self.pool_h == 1 && self.pool_w == 1
    }

    pub fn forward<T: Scalar>(&self, x: &Tensor<T>) -> Result<(Tensor<T>, PoolCache), NnError> {
        expect_rank("max_pool", x, 4)?;
        let (bs, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        if self.is_identity() {
            return Ok((
                x.clone(),
                PoolCache {
                    input_shape: x.shape().to_vec(),
                    argmax: None,
                },
            ));
        }
        let (oh, ow) = (h / self.pool_h, w / self.pool_w);
        if oh == 0 || ow == 0 {
            return Err(NnError::ShapeMismatch {
                op: "max_pool",
                expected: format!("extent at least {}x{}", self.pool_h, self.pool_w),
                got: x.shape().to_vec(),
            });
        }
        let mut y = Tensor::zeros(&[bs, c, oh, ow]);
        let mut argmax = vec![0usize; bs * c * oh * ow];
        let mut o = 0;
        for plane in 0..bs * c {
            let base = plane * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + i * self.pool_h * w + j * self.pool_w;
                    for di in 0..self.pool_h {
                        for dj in 0..self.pool_w {
                            let idx = base + (i * self.pool_h + di) * w + j * self.pool_w + dj;
                            if x.data()[idx] > x.data()[best] {
                                best = idx;
                            }
                        }
                    }
                    y.data_mut()[o] = x.data()[best];
                    argmax[o] = best;
                    o += 1;
                }
            }
        }
        Ok((
            y,
            PoolCache {
                input_shape: x.shape().to_vec(),
                argmax: Some(argmax),
            },
        ))
    }

    pub fn backward<T: Scalar>(&self, cache: &PoolCache, dy: &Tensor<T>) -> Tensor<T> {
        match &cache.argmax {
            None => dy.clone(),
            Some(argmax) => {
                let mut dx = Tensor::zeros(&cache.input_shape);
                for (&src, &g) in argmax.iter().zip(dy.data()) {
                    dx.data_mut()[src] += g;
                }
                dx
            }
        }
    }
}

/// `[conv3x3 -> batch-norm -> ReLU] x 2 -> max-pool`.
#[derive(Clone, Debug)]
pub struct ConvBlock<T> {
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
    pub pool: MaxPool2d,
}

#[derive(Clone, Debug)]
pub struct ConvBlockCache<T> {
    x: Tensor<T>,
    z1: Tensor<T>,
    bn1: BatchNormCache<T>,
    a1: Tensor<T>,
    z2: Tensor<T>,
    bn2: BatchNormCache<T>,
    a2: Tensor<T>,
    pool: PoolCache,
}

impl<T: Scalar> ConvBlock<T> {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        pool: MaxPool2d,
        rng: &mut R,
    ) -> Self {
        Self {
            conv1: Conv2d::new(&format!("{name}.conv1"), in_channels, out_channels, rng),
            bn1: BatchNorm2d::new(&format!("{name}.bn1"), out_channels),
            conv2: Conv2d::new(&format!("{name}.conv2"), out_channels, out_channels, rng),
            bn2: BatchNorm2d::new(&format!("{name}.bn2"), out_channels),
            pool,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.conv2.out_channels()
    }

    pub fn forward(
        &mut self,
        x: &Tensor<T>,
        mode: Mode,
    ) -> Result<(Tensor<T>, ConvBlockCache<T>), NnError> {
        let z1 = self.conv1.forward(x)?;
        let (n1, bn1) = self.bn1.forward(&z1, mode)?;
        let a1 = relu(&n1);
        let z2 = self.conv2.forward(&a1)?;
        let (n2, bn2) = self.bn2.forward(&z2, mode)?;
        let a2 = relu(&n2);
        let (y, pool) = self.pool.forward(&a2)?;
        Ok((
            y,
            ConvBlockCache {
                x: x.clone(),
                z1,
                bn1,
                a1,
                z2,
                bn2,
                a2,
                pool,
            },
        ))
    }

    pub fn backward(&mut self, cache: &ConvBlockCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let da2 = self.pool.backward(&cache.pool, dy);
        let dn2 = relu_backward(&cache.a2, &da2);
        let dz2 = self.bn2.backward(&cache.bn2, &cache.z2, &dn2);
        let da1 = self.conv2.backward(&cache.a1, &dz2);
        let dn1 = relu_backward(&cache.a1, &da1);
        let dz1 = self.bn1.backward(&cache.bn1, &cache.z1, &dn1);
        self.conv1.backward(&cache.x, &dz1)
    }
}

impl<T: Scalar> Module<T> for ConvBlock<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        self.conv1.visit_params(f);
        self.bn1.visit_params(f);
        self.conv2.visit_params(f);
        self.bn2.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.conv1.visit_params_mut(f);
        self.bn1.visit_params_mut(f);
        self.conv2.visit_params_mut(f);
        self.bn2.visit_params_mut(f);
    }
    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.bn1.visit_buffers(f);
        self.bn2.visit_buffers(f);
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.bn1.visit_buffers_mut(f);
        self.bn2.visit_buffers_mut(f);
    }
}

/// Two conv/batch-norm layers with an additive shortcut, followed by ReLU.
///
/// A single-channel input is broadcast across all output channels on the
/// shortcut path; otherwise input and output channel counts must agree.
#[derive(Clone, Debug)]
pub struct ResidualBlock<T> {
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
}

#[derive(Clone, Debug)]
pub struct ResidualCache<T> {
    x: Tensor<T>,
    z1: Tensor<T>,
    bn1: BatchNormCache<T>,
    a1: Tensor<T>,
    z2: Tensor<T>,
    bn2: BatchNormCache<T>,
    y: Tensor<T>,
}

impl<T: Scalar> ResidualBlock<T> {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        channels: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        if in_channels != 1 && in_channels != channels {
            return Err(NnError::InvalidArgument(format!(
                "residual shortcut needs 1 or {channels} input channels, got {in_channels}"
            )));
        }
        Ok(Self {
            conv1: Conv2d::new(&format!("{name}.conv1"), in_channels, channels, rng),
            bn1: BatchNorm2d::new(&format!("{name}.bn1"), channels),
            conv2: Conv2d::new(&format!("{name}.conv2"), channels, channels, rng),
            bn2: BatchNorm2d::new(&format!("{name}.bn2"), channels),
        })
    }

    pub fn out_channels(&self) -> usize {
        self.conv2.out_channels()
    }

    pub fn forward(
        &mut self,
        x: &Tensor<T>,
        mode: Mode,
    ) -> Result<(Tensor<T>, ResidualCache<T>), NnError> {
        let z1 = self.conv1.forward(x)?;
        let (n1, bn1) = self.bn1.forward(&z1, mode)?;
        let a1 = relu(&n1);
        let z2 = self.conv2.forward(&a1)?;
        let (mut s, bn2) = self.bn2.forward(&z2, mode)?;
        let (bs, cin, plane) = (x.dim(0), x.dim(1), x.dim(2) * x.dim(3));
        let c = self.out_channels();
        for b in 0..bs {
            for ch in 0..c {
                let src = if cin == 1 { b * plane } else { (b * c + ch) * plane };
                let dst = (b * c + ch) * plane;
                for i in 0..plane {
                    s.data_mut()[dst + i] += x.data()[src + i];
                }
            }
        }
        let y = relu(&s);
        Ok((
            y.clone(),
            ResidualCache {
                x: x.clone(),
                z1,
                bn1,
                a1,
                z2,
                bn2,
                y,
            },
        ))
    }

    pub fn backward(&mut self, cache: &ResidualCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let ds = relu_backward(&cache.y, dy);
        let dz2 = self.bn2.backward(&cache.bn2, &cache.z2, &ds);
        let da1 = self.conv2.backward(&cache.a1, &dz2);
        let dn1 = relu_backward(&cache.a1, &da1);
        let dz1 = self.bn1.backward(&cache.bn1, &cache.z1, &dn1);
        let mut dx = self.conv1.backward(&cache.x, &dz1);
        let x = &cache.x;
        let (bs, cin, plane) = (x.dim(0), x.dim(1), x.dim(2) * x.dim(3));
        let c = self.out_channels();
        for b in 0..bs {
            for ch in 0..c {
                let dst = if cin == 1 { b * plane } else { (b * c + ch) * plane };
                let src = (b * c + ch) * plane;
                for i in 0..plane {
                    dx.data_mut()[dst + i] += ds.data()[src + i];
                }
            }
        }
        dx
    }
}

impl<T: Scalar> Module<T> for ResidualBlock<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        self.conv1.visit_params(f);
        self.bn1.visit_params(f);
        self.conv2.visit_params(f);
        self.bn2.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.conv1.visit_params_mut(f);
        self.bn1.visit_params_mut(f);
        self.conv2.visit_params_mut(f);
        self.bn2.visit_params_mut(f);
    }
    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.bn1.visit_buffers(f);
        self.bn2.visit_buffers(f);
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.bn1.visit_buffers_mut(f);
        self.bn2.visit_buffers_mut(f);
    }
}
