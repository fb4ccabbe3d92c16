//! Minibatch SGD with momentum and weight decay on the mean squared error.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::FrameletNet;
use super::tensor::{Maps, Scalar};
use super::{normalized_input, plane_scale};
use crate::error::{Error, Result};
use crate::plane::RxXmitPlane;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// The rate is multiplied by `lr_decay_factor` every this many epochs.
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub momentum: f64,
    /// L2 penalty on convolution weights.
    pub weight_decay: f64,
    pub seed: u64,
    /// Train on random `(rows, cols)` windows instead of whole planes.
    pub crop: Option<(usize, usize)>,
    /// Stop after the first epoch that ends past this many seconds.
    pub time_budget_s: Option<f64>,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            epochs: 100,
            batch_size: 8,
            learning_rate: 1e-3,
            lr_decay_every: 50,
            lr_decay_factor: 0.5,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
            crop: None,
            time_budget_s: None,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.lr_decay_every == 0 {
            return Err(Error::config("batch size and decay period must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::config("learning rate, momentum or weight decay out of range"));
        }
        Ok(())
    }

    pub fn rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay_factor.powi((epoch / self.lr_decay_every) as i32)
    }
}

/// Zero-filled input (missing flags set) and its fully sampled target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPair {
    pub input: RxXmitPlane,
    pub target: RxXmitPlane,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub log: Vec<EpochLog>,
    /// Mean loss of the untrained net over the training set.
    pub initial_loss: f64,
    pub steps: usize,
    /// First epoch whose loss was not finite; training stopped there.
    pub diverged_at: Option<usize>,
    pub stopped_by_budget: bool,
    pub elapsed_s: f64,
}

impl TrainingReport {
    pub fn final_loss(&self) -> f64 {
        self.log.last().map_or(self.initial_loss, |e| e.loss)
    }

    /// `epoch,loss,lr` rows with a header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch,loss,lr")?;
        for e in &self.log {
            writeln!(w, "{},{:e},{:e}", e.epoch, e.loss, e.lr)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

/// Normalized sample: input channels and target, both `rows x cols`
/// row-major.
struct Sample {
    rows: usize,
    cols: usize,
    input: Vec<f64>,
    target: Vec<f64>,
}

fn prepare<T: Scalar>(net: &FrameletNet<T>, pairs: &[TrainPair]) -> Result<Vec<Sample>> {
    let Some(first) = pairs.first() else {
        return Ok(Vec::new());
    };
    let shape = first.input.shape();
    pairs
        .iter()
        .map(|p| {
            if p.input.shape() != shape || p.target.shape() != shape {
                return Err(Error::shape(format!("{shape:?}"), format!("{:?}", p.input.shape())));
            }
            let scale = plane_scale(&p.input, &net.config);
            let input = normalized_input(&p.input, &net.config, scale);
            let target = p.target.values().transpose().iter().map(|v| v / scale).collect();
            Ok(Sample {
                rows: shape.0,
                cols: shape.1,
                input,
                target,
            })
        })
        .collect()
}

/// Batch of windows: `(top, left)` per sample, `rows x cols` each.
fn assemble<T: Scalar>(
    samples: &[&Sample],
    windows: &[(usize, usize)],
    rows: usize,
    cols: usize,
    channels: usize,
) -> (Maps<T>, Maps<T>) {
    let b = samples.len();
    let mut x = Maps::zeros(channels, b, rows, cols);
    let mut t = Maps::zeros(1, b, rows, cols);
    let plane = rows * cols;
    for (i, (s, &(top, left))) in samples.iter().zip(windows).enumerate() {
        let full = s.rows * s.cols;
        for c in 0..channels {
            let dst = &mut x.channel_mut(c)[i * plane..(i + 1) * plane];
            for r in 0..rows {
                let src = &s.input[c * full + (top + r) * s.cols + left..][..cols];
                for (d, &v) in dst[r * cols..(r + 1) * cols].iter_mut().zip(src) {
                    *d = T::of(v);
                }
            }
        }
        let dst = &mut t.data[i * plane..(i + 1) * plane];
        for r in 0..rows {
            let src = &s.target[(top + r) * s.cols + left..][..cols];
            for (d, &v) in dst[r * cols..(r + 1) * cols].iter_mut().zip(src) {
                *d = T::of(v);
            }
        }
    }
    (x, t)
}

fn mse<T: Scalar>(out: &Maps<T>, target: &Maps<T>) -> f64 {
    let n = out.data.len() as f64;
    out.data
        .iter()
        .zip(&target.data)
        .map(|(a, b)| (a.f64() - b.f64()).powi(2))
        .sum::<f64>()
        / n
}

/// Mean squared error of the net in inference mode on whole planes,
/// in normalized units.
pub fn evaluate_loss<T: Scalar>(net: &FrameletNet<T>, pairs: &[TrainPair]) -> Result<f64> {
    let samples = prepare(net, pairs)?;
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for chunk in samples.chunks(8) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (r, c) = (chunk[0].rows, chunk[0].cols);
        let (x, t) = assemble::<T>(&refs, &vec![(0, 0); refs.len()], r, c, net.config.in_channels);
        total += mse(&net.forward(&x)?, &t) * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Train in place. A second call with other data fine-tunes the same
/// weights (momentum restarts).
pub fn train<T: Scalar>(
    net: &mut FrameletNet<T>,
    data: &[TrainPair],
    validation: &[TrainPair],
    params: &TrainParams,
) -> Result<TrainingReport> {
    params.validate()?;
    if data.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let start = Instant::now();
    let samples = prepare(net, data)?;
    let (rows, cols) = (samples[0].rows, samples[0].cols);
    let (cr, cc) = params.crop.unwrap_or((rows, cols));
    if cr == 0 || cc == 0 || cr > rows || cc > cols {
        return Err(Error::config(format!("crop {cr}x{cc} does not fit {rows}x{cols} planes")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let decayed = net.decayed_params();
    let mut velocity = net.zero_grads();
    let mut report = TrainingReport {
        initial_loss: evaluate_loss(net, data)?,
        ..TrainingReport::default()
    };
    net.config.trained_shape = Some((rows, cols));
    let channels = net.config.in_channels;
    let mut order: Vec<usize> = (0..samples.len()).collect();

    for epoch in 0..params.epochs {
        let lr = params.rate_at(epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for batch in order.chunks(params.batch_size) {
            let refs: Vec<&Sample> = batch.iter().map(|&i| &samples[i]).collect();
            let windows: Vec<(usize, usize)> = refs
                .iter()
                .map(|_| (rng.gen_range(0..=rows - cr), rng.gen_range(0..=cols - cc)))
                .collect();
            let (x, t) = assemble::<T>(&refs, &windows, cr, cc, channels);
            let (out, cache) = net.forward_train(&x)?;
            let loss = mse(&out, &t);
            if !loss.is_finite() {
                report.diverged_at = Some(epoch);
                break;
            }
            epoch_loss += loss;
            batches += 1;
            let scale = T::of(2.0 / out.data.len() as f64);
            let mut dy = out;
            dy.data.iter_mut().zip(&t.data).for_each(|(o, &tv)| *o = (*o - tv) * scale);
            let grads = net.backward(&cache, &dy);
            let (mom, lr_t, wd) = (T::of(params.momentum), T::of(lr), T::of(params.weight_decay));
            for (((p, g), v), &decay) in net.params_mut().into_iter().zip(&grads).zip(&mut velocity).zip(&decayed) {
                for ((w, &gw), vw) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                    let gw = if decay { gw + wd * *w } else { gw };
                    *vw = mom * *vw - lr_t * gw;
                    *w += *vw;
                }
            }
            report.steps += 1;
        }
        if report.diverged_at.is_some() {
            break;
        }
        let loss = epoch_loss / batches.max(1) as f64;
        let val_loss = if validation.is_empty() {
            None
        } else {
            Some(evaluate_loss(net, validation)?)
        };
        report.log.push(EpochLog {
            epoch,
            loss,
            lr,
            val_loss,
        });
        if let Some(budget) = params.time_budget_s {
            if start.elapsed().as_secs_f64() > budget && epoch + 1 < params.epochs {
                report.stopped_by_budget = true;
                break;
            }
        }
    }
    report.elapsed_s = start.elapsed().as_secs_f64();
    Ok(report)
}
