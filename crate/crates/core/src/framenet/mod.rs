//! Convolutional framelets and the encoder-decoder network that
//! interpolates missing RF samples.

mod checkpoint;
mod framelet;
mod network;
mod tensor;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, FNW1_MAGIC};
pub use framelet::{
    check_frame_condition, framelet_decompose, framelet_decompose_matrix, framelet_reconstruct,
    framelet_reconstruct_matrix, FilterBank, FrameCheck, FrameOperators, FrameletCoefficients,
};
pub use network::{gradient_check, BatchNorm, Block, Conv, FrameletNet, NetConfig};
pub use tensor::{Maps, Padding, Scalar};
pub use train::{evaluate_loss, train, EpochLog, TrainPair, TrainParams, TrainingReport};

use crate::error::{Error, Result};
use crate::plane::RxXmitPlane;

/// Planes per forward batch at inference.
const INFER_BATCH: usize = 16;

/// RMS of the measured samples, or 1 when normalization is off or the
/// plane has no energy.
pub(crate) fn plane_scale(plane: &RxXmitPlane, config: &NetConfig) -> f64 {
    if !config.normalize_planes {
        return 1.0;
    }
    let n = plane.measured_count();
    if n == 0 {
        return 1.0;
    }
    let rms = (plane.values().norm_squared() / n as f64).sqrt();
    if rms > 0.0 {
        rms
    } else {
        1.0
    }
}

/// Row-major input channels: the scaled zero-filled plane, then the
/// sampling mask when the net takes two channels.
pub(crate) fn normalized_input(plane: &RxXmitPlane, config: &NetConfig, scale: f64) -> Vec<f64> {
    let mut out: Vec<f64> = plane.values().transpose().iter().map(|v| v / scale).collect();
    if config.in_channels > 1 {
        out.extend(plane.missing().transpose().iter().map(|&m| if m { 0.0 } else { 1.0 }));
        out.resize(config.in_channels * plane.n1() * plane.n2(), 0.0);
    }
    out
}

impl<T: Scalar> FrameletNet<T> {
    /// Interpolate zero-filled planes whose missing flags mark the gaps.
    pub fn interpolate(&self, planes: &[RxXmitPlane]) -> Result<Vec<RxXmitPlane>> {
        let mut out = Vec::with_capacity(planes.len());
        let Some(first) = planes.first() else {
            return Ok(out);
        };
        let (rows, cols) = first.shape();
        if let Some(shape) = self.config.trained_shape {
            if shape != (rows, cols) {
                return Err(Error::shape(format!("{shape:?}"), format!("{:?}", (rows, cols))));
            }
        }
        let plane_len = rows * cols;
        for chunk in planes.chunks(INFER_BATCH) {
            let mut x = Maps::<T>::zeros(self.config.in_channels, chunk.len(), rows, cols);
            let mut scales = Vec::with_capacity(chunk.len());
            for (i, p) in chunk.iter().enumerate() {
                if p.shape() != (rows, cols) {
                    return Err(Error::shape(format!("{:?}", (rows, cols)), format!("{:?}", p.shape())));
                }
                let scale = plane_scale(p, &self.config);
                let input = normalized_input(p, &self.config, scale);
                for c in 0..self.config.in_channels {
                    let dst = &mut x.channel_mut(c)[i * plane_len..(i + 1) * plane_len];
                    for (d, &v) in dst.iter_mut().zip(&input[c * plane_len..(c + 1) * plane_len]) {
                        *d = T::of(v);
                    }
                }
                scales.push(scale);
            }
            let y = self.forward(&x)?;
            for (i, p) in chunk.iter().enumerate() {
                let vals = &y.data[i * plane_len..(i + 1) * plane_len];
                let plane = RxXmitPlane::from_fn(rows, cols, |r, c| {
                    if self.config.data_consistency && !p.is_missing(r, c) {
                        p.values()[(r, c)]
                    } else {
                        vals[r * cols + c].f64() * scales[i]
                    }
                });
                if plane.values().iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numerical("network produced non-finite output".into()));
                }
                out.push(plane);
            }
        }
        Ok(out)
    }
}
