//! Encoder-decoder of 3x3 conv-BN-ReLU blocks with symmetric skip
//! concatenations and a linear 1x1 head.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::tensor::{col2im, gemm, im2col, Maps, Padding, Scalar, View};
use crate::error::{Error, Result};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// Architecture descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    /// Convolution layers including the 1x1 head.
    pub layers: usize,
    /// Feature channels of every hidden layer.
    pub channels: usize,
    /// Skip concatenations; the body is split into `2 * skips + 1` stages.
    pub skips: usize,
    pub in_channels: usize,
    pub batch_norm: bool,
    pub padding: Padding,
    /// Add the input plane to the head output.
    pub residual: bool,
    /// Sub-sampling ratio the net is built for; above 4 every stage gets
    /// one more 3x3 block.
    pub subsampling_ratio: usize,
    /// Scale every plane by its RMS before the net and undo it after.
    pub normalize_planes: bool,
    /// Put measured samples back into the output.
    pub data_consistency: bool,
    /// Plane shape seen in training; inputs must match it when set.
    pub trained_shape: Option<(usize, usize)>,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig::desk(4)
    }
}

impl NetConfig {
    /// 10 layers, 16 channels, 2 skips.
    pub fn desk(subsampling_ratio: usize) -> Self {
        NetConfig {
            layers: 10,
            channels: 16,
            skips: 2,
            in_channels: 1,
            batch_norm: true,
            padding: Padding::Circular,
            residual: true,
            subsampling_ratio,
            normalize_planes: true,
            data_consistency: true,
            trained_shape: None,
        }
    }

    /// 28 layers, 64 channels, 4 skips.
    pub fn full(subsampling_ratio: usize) -> Self {
        NetConfig {
            layers: 28,
            channels: 64,
            skips: 4,
            ..NetConfig::desk(subsampling_ratio)
        }
    }

    /// One 1x1 layer with no normalization; `FrameletNet::identity` sets
    /// its weight to 1.
    pub fn single_layer() -> Self {
        NetConfig {
            layers: 1,
            channels: 1,
            skips: 0,
            batch_norm: false,
            residual: false,
            normalize_planes: false,
            data_consistency: false,
            ..NetConfig::desk(1)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.channels == 0 || self.in_channels == 0 {
            return Err(Error::config("layers, channels and input channels must be positive"));
        }
        if self.layers == 1 && self.skips > 0 {
            return Err(Error::config("a single-layer net has no room for skips"));
        }
        if self.layers > 1 && self.layers - 1 < 2 * self.skips + 1 {
            return Err(Error::config(format!(
                "{} hidden layers cannot form {} stages",
                self.layers - 1,
                2 * self.skips + 1
            )));
        }
        Ok(())
    }

    /// 3x3 blocks per stage: the `layers - 1` body layers spread as evenly
    /// as possible, extra layers going to the outermost stage pairs first
    /// and a leftover single one to the middle stage.
    pub fn stage_sizes(&self) -> Vec<usize> {
        if self.layers <= 1 {
            return Vec::new();
        }
        let stages = 2 * self.skips + 1;
        let body = self.layers - 1;
        let mut sizes = vec![body / stages; stages];
        let mut rest = body % stages;
        let mut outer = 0;
        while rest >= 2 {
            sizes[outer] += 1;
            sizes[stages - 1 - outer] += 1;
            outer += 1;
            rest -= 2;
        }
        if rest == 1 {
            sizes[self.skips] += 1;
        }
        if self.subsampling_ratio > 4 {
            sizes.iter_mut().for_each(|s| *s += 1);
        }
        sizes
    }

    /// Convolution layers actually built, including the head.
    pub fn conv_layers(&self) -> usize {
        self.stage_sizes().iter().sum::<usize>() + 1
    }

    /// `(in, out)` channels of every 3x3 block, in order.
    fn block_channels(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut cur = self.in_channels;
        for (s, &n) in self.stage_sizes().iter().enumerate() {
            for i in 0..n {
                let cin = if i == 0 && s > self.skips { cur + self.channels } else { cur };
                out.push((cin, self.channels));
                cur = self.channels;
            }
        }
        out
    }

    /// Trainable scalars: 3x3 and 1x1 weights and biases, plus BN scale and
    /// shift.
    pub fn parameter_count(&self) -> usize {
        let blocks = self.block_channels();
        let head_in = blocks.last().map_or(self.in_channels, |b| b.1);
        let bn = if self.batch_norm { 2 } else { 0 };
        blocks.iter().map(|&(i, o)| 9 * i * o + o + bn * o).sum::<usize>() + head_in + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv<T> {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    /// `cout x (cin * kernel * kernel)`, row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub conv: Conv<T>,
    pub bn: Option<BatchNorm<T>>,
    pub relu: bool,
}

/// Saved activations of one block for the backward pass.
struct BlockCache<T> {
    input: Maps<T>,
    normalized: Option<(Maps<T>, Vec<T>)>,
    output: Maps<T>,
}

pub(crate) struct Cache<T> {
    blocks: Vec<BlockCache<T>>,
}

/// Gradients in the order of [`FrameletNet::params`].
pub type Grads<T> = Vec<Vec<T>>;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameletNet<T> {
    pub config: NetConfig,
    pub blocks: Vec<Block<T>>,
    pub head: Conv<T>,
}

fn xavier<T: Scalar>(rng: &mut ChaCha8Rng, cin: usize, cout: usize, k: usize) -> Vec<T> {
    let std = (2.0 / ((cin + cout) * k * k) as f64).sqrt();
    (0..cout * cin * k * k)
        .map(|_| T::of(std * rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

impl<T: Scalar> Conv<T> {
    fn new(cin: usize, cout: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Self {
        Conv {
            cin,
            cout,
            kernel,
            weight: xavier(rng, cin, cout, kernel),
            bias: vec![T::zero(); cout],
        }
    }

    fn forward(&self, x: &Maps<T>, padding: Padding, scratch: &mut Vec<T>) -> Maps<T> {
        assert_eq!(x.channels, self.cin, "conv input channels");
        let p = x.positions();
        let mut out = Maps::zeros(self.cout, x.batch, x.height, x.width);
        for (o, &b) in self.bias.iter().enumerate() {
            out.channel_mut(o).iter_mut().for_each(|v| *v = b);
        }
        let cols: &[T] = if self.kernel == 1 {
            &x.data
        } else {
            im2col(x, self.kernel, padding, scratch);
            scratch
        };
        let kk = self.cin * self.kernel * self.kernel;
        gemm(
            T::one(),
            View::new(&self.weight, self.cout, kk),
            View::new(cols, kk, p),
            T::one(),
            &mut out.data,
            p,
        );
        out
    }

    /// Accumulates weight and bias gradients, returns the input gradient.
    fn backward(
        &self,
        x: &Maps<T>,
        dy: &Maps<T>,
        padding: Padding,
        dw: &mut [T],
        db: &mut [T],
        scratch: &mut Vec<T>,
        need_input_grad: bool,
    ) -> Option<Maps<T>> {
        let p = x.positions();
        let kk = self.cin * self.kernel * self.kernel;
        for (o, g) in db.iter_mut().enumerate() {
            *g += dy.channel(o).iter().copied().sum::<T>();
        }
        let cols: &[T] = if self.kernel == 1 {
            &x.data
        } else {
            im2col(x, self.kernel, padding, scratch);
            scratch
        };
        gemm(
            T::one(),
            View::new(&dy.data, self.cout, p),
            View::new(cols, kk, p).t(),
            T::one(),
            dw,
            kk,
        );
        if !need_input_grad {
            return None;
        }
        let mut dx = Maps::zeros(self.cin, x.batch, x.height, x.width);
        if self.kernel == 1 {
            gemm(
                T::one(),
                View::new(&self.weight, self.cout, kk).t(),
                View::new(&dy.data, self.cout, p),
                T::zero(),
                &mut dx.data,
                p,
            );
        } else {
            let mut dcols = vec![T::zero(); kk * p];
            gemm(
                T::one(),
                View::new(&self.weight, self.cout, kk).t(),
                View::new(&dy.data, self.cout, p),
                T::zero(),
                &mut dcols,
                p,
            );
            col2im(&dcols, self.kernel, padding, &mut dx);
        }
        Some(dx)
    }

    fn cast<U: Scalar>(&self) -> Conv<U> {
        Conv {
            cin: self.cin,
            cout: self.cout,
            kernel: self.kernel,
            weight: cast_vec(&self.weight),
            bias: cast_vec(&self.bias),
        }
    }
}

pub(crate) fn cast_vec<T: Scalar, U: Scalar>(v: &[T]) -> Vec<U> {
    v.iter().map(|x| U::of(x.f64())).collect()
}

impl<T: Scalar> BatchNorm<T> {
    fn new(c: usize) -> Self {
        BatchNorm {
            gamma: vec![T::one(); c],
            beta: vec![T::zero(); c],
            running_mean: vec![T::zero(); c],
            running_var: vec![T::one(); c],
        }
    }

    fn infer(&self, z: &mut Maps<T>) {
        let eps = T::of(BN_EPS);
        for c in 0..z.channels {
            let scale = self.gamma[c] / (self.running_var[c] + eps).sqrt();
            let shift = self.beta[c] - self.running_mean[c] * scale;
            z.channel_mut(c).iter_mut().for_each(|v| *v = *v * scale + shift);
        }
    }

    /// Batch statistics; returns the normalized maps and `1 / std`.
    fn train(&mut self, z: &mut Maps<T>) -> (Maps<T>, Vec<T>) {
        let eps = T::of(BN_EPS);
        let mom = T::of(BN_MOMENTUM);
        let n = z.positions();
        let nt = T::of(n as f64);
        let mut xhat = z.clone();
        let mut inv = vec![T::zero(); z.channels];
        for c in 0..z.channels {
            let ch = z.channel(c);
            let mean = ch.iter().copied().sum::<T>() / nt;
            let var = ch.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nt;
            let is = T::one() / (var + eps).sqrt();
            inv[c] = is;
            let (g, b) = (self.gamma[c], self.beta[c]);
            for (xh, v) in xhat.channel_mut(c).iter_mut().zip(z.channel_mut(c).iter_mut()) {
                *xh = (*v - mean) * is;
                *v = g * *xh + b;
            }
            let unbiased = if n > 1 { var * nt / T::of((n - 1) as f64) } else { var };
            self.running_mean[c] = (T::one() - mom) * self.running_mean[c] + mom * mean;
            self.running_var[c] = (T::one() - mom) * self.running_var[c] + mom * unbiased;
        }
        (xhat, inv)
    }

    fn backward(&self, dy: &mut Maps<T>, xhat: &Maps<T>, inv: &[T], dgamma: &mut [T], dbeta: &mut [T]) {
        let nt = T::of(dy.positions() as f64);
        for c in 0..dy.channels {
            let xh = xhat.channel(c);
            let g = dy.channel_mut(c);
            let sum_g: T = g.iter().copied().sum();
            let sum_gx: T = g.iter().zip(xh).map(|(&a, &b)| a * b).sum();
            dgamma[c] += sum_gx;
            dbeta[c] += sum_g;
            let k = self.gamma[c] * inv[c];
            let (mg, mgx) = (sum_g / nt, sum_gx / nt);
            for (v, &x) in g.iter_mut().zip(xh) {
                *v = k * (*v - mg - x * mgx);
            }
        }
    }

    fn cast<U: Scalar>(&self) -> BatchNorm<U> {
        BatchNorm {
            gamma: cast_vec(&self.gamma),
            beta: cast_vec(&self.beta),
            running_mean: cast_vec(&self.running_mean),
            running_var: cast_vec(&self.running_var),
        }
    }
}

impl<T: Scalar> FrameletNet<T> {
    /// Xavier-initialized network.
    pub fn build(config: &NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = config
            .block_channels()
            .into_iter()
            .map(|(cin, cout)| Block {
                conv: Conv::new(cin, cout, 3, &mut rng),
                bn: config.batch_norm.then(|| BatchNorm::new(cout)),
                relu: true,
            })
            .collect::<Vec<_>>();
        let head_in = blocks.last().map_or(config.in_channels, |b| b.conv.cout);
        Ok(FrameletNet {
            config: config.clone(),
            blocks,
            head: Conv::new(head_in, 1, 1, &mut rng),
        })
    }

    /// Single 1x1 layer with unit weight: maps every input to itself.
    pub fn identity() -> Self {
        let mut net = FrameletNet::build(&NetConfig::single_layer(), 0).expect("valid preset");
        net.head.weight = vec![T::one()];
        net.head.bias = vec![T::zero()];
        net
    }

    pub fn cast<U: Scalar>(&self) -> FrameletNet<U> {
        FrameletNet {
            config: self.config.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    conv: b.conv.cast(),
                    bn: b.bn.as_ref().map(BatchNorm::cast),
                    relu: b.relu,
                })
                .collect(),
            head: self.head.cast(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Block index ranges of every stage.
    fn stages(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.config
            .stage_sizes()
            .iter()
            .map(|&n| {
                let r = start..start + n;
                start += n;
                r
            })
            .collect()
    }

    /// Trainable tensors in a fixed order: per block conv weight, conv
    /// bias, then BN gamma and beta when present; head weight and bias last.
    pub fn params(&self) -> Vec<&Vec<T>> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.push(&b.conv.weight);
            out.push(&b.conv.bias);
            if let Some(bn) = &b.bn {
                out.push(&bn.gamma);
                out.push(&bn.beta);
            }
        }
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.conv.weight);
            out.push(&mut b.conv.bias);
            if let Some(bn) = &mut b.bn {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    /// Which tensors of [`Self::params`] are convolution weights (the ones
    /// weight decay applies to).
    pub fn decayed_params(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend([true, false]);
            if b.bn.is_some() {
                out.extend([false, false]);
            }
        }
        out.extend([true, false]);
        out
    }

    pub fn zero_grads(&self) -> Grads<T> {
        self.params().iter().map(|p| vec![T::zero(); p.len()]).collect()
    }

    fn check_input(&self, x: &Maps<T>) -> Result<()> {
        if x.channels != self.config.in_channels {
            return Err(Error::shape(self.config.in_channels.to_string(), x.channels.to_string()));
        }
        if x.positions() == 0 {
            return Err(Error::config("empty input"));
        }
        Ok(())
    }

    /// Inference: BN uses its running statistics.
    pub fn forward(&self, x: &Maps<T>) -> Result<Maps<T>> {
        self.check_input(x)?;
        let pad = self.config.padding;
        let mut scratch = Vec::new();
        let mut cur = x.clone();
        let mut encoder: Vec<Maps<T>> = Vec::new();
        for (s, range) in self.stages().into_iter().enumerate() {
            if s > self.config.skips {
                cur = cur.concat(&encoder[2 * self.config.skips - s]);
            }
            for b in &self.blocks[range] {
                let mut z = b.conv.forward(&cur, pad, &mut scratch);
                if let Some(bn) = &b.bn {
                    bn.infer(&mut z);
                }
                if b.relu {
                    z.data.iter_mut().for_each(|v| *v = v.max(T::zero()));
                }
                cur = z;
            }
            if s < self.config.skips {
                encoder.push(cur.clone());
            }
        }
        let mut out = self.head.forward(&cur, pad, &mut scratch);
        if self.config.residual {
            for (o, &i) in out.data.iter_mut().zip(x.channel(0)) {
                *o += i;
            }
        }
        Ok(out)
    }

    /// Training-mode forward: BN uses batch statistics and updates its
    /// running estimates.
    pub(crate) fn forward_train(&mut self, x: &Maps<T>) -> Result<(Maps<T>, Cache<T>)> {
        self.check_input(x)?;
        let pad = self.config.padding;
        let skips = self.config.skips;
        let stages = self.stages();
        let mut scratch = Vec::new();
        let mut cache = Cache {
            blocks: Vec::with_capacity(self.blocks.len()),
        };
        let mut cur = x.clone();
        let mut encoder: Vec<Maps<T>> = Vec::new();
        for (s, range) in stages.into_iter().enumerate() {
            if s > skips {
                cur = cur.concat(&encoder[2 * skips - s]);
            }
            for b in &mut self.blocks[range] {
                let mut z = b.conv.forward(&cur, pad, &mut scratch);
                let normalized = b.bn.as_mut().map(|bn| bn.train(&mut z));
                if b.relu {
                    z.data.iter_mut().for_each(|v| *v = v.max(T::zero()));
                }
                let input = std::mem::replace(&mut cur, z);
                cache.blocks.push(BlockCache {
                    input,
                    normalized,
                    output: cur.clone(),
                });
            }
            if s < skips {
                encoder.push(cur.clone());
            }
        }
        let mut out = self.head.forward(&cur, pad, &mut scratch);
        if self.config.residual {
            for (o, &i) in out.data.iter_mut().zip(x.channel(0)) {
                *o += i;
            }
        }
        cache.blocks.push(BlockCache {
            input: cur,
            normalized: None,
            output: Maps::zeros(0, 0, 0, 0),
        });
        Ok((out, cache))
    }

    /// Gradients of a loss with output gradient `dy`, from the cache of
    /// [`Self::forward_train`].
    pub(crate) fn backward(&self, cache: &Cache<T>, dy: &Maps<T>) -> Grads<T> {
        let pad = self.config.padding;
        let skips = self.config.skips;
        let mut grads = self.zero_grads();
        let mut scratch = Vec::new();
        // tensor offsets of every block in the gradient list
        let mut offsets = Vec::with_capacity(self.blocks.len());
        let mut idx = 0;
        for b in &self.blocks {
            offsets.push(idx);
            idx += if b.bn.is_some() { 4 } else { 2 };
        }
        let head_cache = cache.blocks.last().expect("head cache");
        let (gw, rest) = grads[idx..].split_at_mut(1);
        let mut g = match self.head.backward(
            &head_cache.input,
            dy,
            pad,
            &mut gw[0],
            &mut rest[0],
            &mut scratch,
            !self.blocks.is_empty(),
        ) {
            Some(g) => g,
            None => return grads,
        };
        let stages = self.stages();
        let mut skip_grads: Vec<Option<Maps<T>>> = vec![None; skips];
        for (s, range) in stages.into_iter().enumerate().rev() {
            if s < skips {
                if let Some(extra) = skip_grads[s].take() {
                    for (a, b) in g.data.iter_mut().zip(extra.data) {
                        *a += b;
                    }
                }
            }
            let first = range.start;
            for bi in range.rev() {
                let b = &self.blocks[bi];
                let bc = &cache.blocks[bi];
                if b.relu {
                    for (v, &o) in g.data.iter_mut().zip(&bc.output.data) {
                        if o <= T::zero() {
                            *v = T::zero();
                        }
                    }
                }
                let o = offsets[bi];
                if let (Some(bn), Some((xhat, inv))) = (&b.bn, &bc.normalized) {
                    let (ga, gb) = grads[o + 2..o + 4].split_at_mut(1);
                    bn.backward(&mut g, xhat, inv, &mut ga[0], &mut gb[0]);
                }
                let (gw, gb) = grads[o..o + 2].split_at_mut(1);
                let need = bi > 0;
                match b.conv.backward(&bc.input, &g, pad, &mut gw[0], &mut gb[0], &mut scratch, need) {
                    Some(dx) => g = dx,
                    None => return grads,
                }
                if bi == first && s > skips {
                    let prev = g.channels - self.config.channels;
                    let (a, b) = std::mem::replace(&mut g, Maps::zeros(0, 0, 0, 0)).split(prev);
                    skip_grads[2 * skips - s] = Some(b);
                    g = a;
                }
            }
        }
        grads
    }
}

fn half_sse(out: &Maps<f64>, target: &Maps<f64>) -> f64 {
    0.5 * out.data.iter().zip(&target.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
}

/// Worst relative error between backpropagated gradients of the loss
/// `0.5 * |net(x) - target|^2` (training-mode forward) and fourth-order
/// central differences, over every parameter. Gradients that are exactly
/// zero, such as biases feeding batch normalization, are compared against
/// `1e-3` of the largest gradient instead of themselves.
pub fn gradient_check(net: &FrameletNet<f64>, x: &Maps<f64>, target: &Maps<f64>) -> Result<f64> {
    // training-mode passes update running statistics; keep `net` untouched
    let mut base = net.clone();
    let (out, cache) = base.forward_train(x)?;
    if !out.same_geometry(target) {
        return Err(Error::shape(
            format!("{}x{}x{}x{}", out.channels, out.batch, out.height, out.width),
            format!("{}x{}x{}x{}", target.channels, target.batch, target.height, target.width),
        ));
    }
    let mut dy = out.clone();
    dy.data.iter_mut().zip(&target.data).for_each(|(a, b)| *a -= b);
    let grads = base.backward(&cache, &dy);
    let h = 1e-5;
    let gmax = grads.iter().flatten().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut worst = 0.0f64;
    for t in 0..grads.len() {
        for i in 0..grads[t].len() {
            let eval = |delta: f64| -> Result<f64> {
                let mut probe = net.clone();
                probe.params_mut()[t][i] += delta;
                Ok(half_sse(&probe.forward_train(x)?.0, target))
            };
            let numeric = (8.0 * (eval(h)? - eval(-h)?) - (eval(2.0 * h)? - eval(-2.0 * h)?)) / (12.0 * h);
            let analytic = grads[t][i];
            let scale = analytic.abs().max(numeric.abs()).max(1e-3 * gmax);
            if scale > 0.0 {
                worst = worst.max((analytic - numeric).abs() / scale);
            }
        }
    }
    Ok(worst)
}
