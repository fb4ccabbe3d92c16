//! Separable piecewise-linear fill of missing samples over the
//! Rx, Xmit and frame axes.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plane::RxXmitPlane;
use crate::sampling::{apply_mask, SamplingMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Rx,
    Xmit,
    Frame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearParams {
    /// Pass order; each pass fills only entries still missing.
    pub order: Vec<Axis>,
    /// Frames considered by the frame pass, centred on the output frame.
    pub window: usize,
}

impl Default for LinearParams {
    fn default() -> Self {
        LinearParams {
            order: vec![Axis::Rx, Axis::Xmit, Axis::Frame],
            window: 3,
        }
    }
}

impl LinearParams {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::config(format!("window must be odd, got {}", self.window)));
        }
        if self.order.is_empty() {
            return Err(Error::config("at least one interpolation axis is required"));
        }
        for (i, a) in self.order.iter().enumerate() {
            if self.order[..i].contains(a) {
                return Err(Error::config(format!("axis {a:?} listed twice")));
            }
        }
        Ok(())
    }
}

/// Fill unknown entries of a line from its known ones: linear between the
/// nearest known neighbours, constant beyond the first and last.
/// Lines without any known entry are left untouched.
fn fill_line(values: &mut [f64], known: &mut [bool]) {
    let idx: Vec<usize> = (0..values.len()).filter(|&i| known[i]).collect();
    let (Some(&first), Some(&last)) = (idx.first(), idx.last()) else {
        return;
    };
    for i in 0..first {
        values[i] = values[first];
    }
    for i in last + 1..values.len() {
        values[i] = values[last];
    }
    for w in idx.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (va, vb) = (values[a], values[b]);
        for i in a + 1..b {
            let t = (i - a) as f64 / (b - a) as f64;
            values[i] = va + t * (vb - va);
        }
    }
    known.iter_mut().for_each(|k| *k = true);
}

struct Stack {
    values: Vec<DMatrix<f64>>,
    known: Vec<DMatrix<bool>>,
}

impl Stack {
    fn pass(&mut self, axis: Axis) {
        let (n1, n2) = self.values[0].shape();
        match axis {
            Axis::Rx => {
                for (v, k) in self.values.iter_mut().zip(self.known.iter_mut()) {
                    for c in 0..n2 {
                        let mut line: Vec<f64> = v.column(c).iter().copied().collect();
                        let mut kl: Vec<bool> = k.column(c).iter().copied().collect();
                        fill_line(&mut line, &mut kl);
                        v.column_mut(c).copy_from_slice(&line);
                        k.column_mut(c).copy_from_slice(&kl);
                    }
                }
            }
            Axis::Xmit => {
                for (v, k) in self.values.iter_mut().zip(self.known.iter_mut()) {
                    for r in 0..n1 {
                        let mut line: Vec<f64> = v.row(r).iter().copied().collect();
                        let mut kl: Vec<bool> = k.row(r).iter().copied().collect();
                        fill_line(&mut line, &mut kl);
                        for c in 0..n2 {
                            v[(r, c)] = line[c];
                            k[(r, c)] = kl[c];
                        }
                    }
                }
            }
            Axis::Frame => {
                let n = self.values.len();
                let mut line = vec![0.0; n];
                let mut kl = vec![false; n];
                for c in 0..n2 {
                    for r in 0..n1 {
                        if self.known.iter().all(|k| k[(r, c)]) {
                            continue;
                        }
                        for f in 0..n {
                            line[f] = self.values[f][(r, c)];
                            kl[f] = self.known[f][(r, c)];
                        }
                        fill_line(&mut line, &mut kl);
                        for f in 0..n {
                            self.values[f][(r, c)] = line[f];
                            self.known[f][(r, c)] = kl[f];
                        }
                    }
                }
            }
        }
    }
}

/// Interpolate every frame; the frame pass for frame `i` sees the frames
/// within `window / 2` of it. Measured samples are returned unchanged.
pub fn linear_interpolate(frames: &[(RxXmitPlane, SamplingMask)], params: &LinearParams) -> Result<Vec<RxXmitPlane>> {
    params.validate()?;
    let Some((first, _)) = frames.first() else {
        return Ok(Vec::new());
    };
    let mut masked = Vec::with_capacity(frames.len());
    for (plane, mask) in frames {
        if plane.shape() != first.shape() {
            return Err(Error::shape(format!("{:?}", first.shape()), format!("{:?}", plane.shape())));
        }
        masked.push(apply_mask(plane, mask)?);
    }
    let half = params.window / 2;
    let mut out = Vec::with_capacity(frames.len());
    for i in 0..masked.len() {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(masked.len());
        let mut stack = Stack {
            values: masked[lo..hi].iter().map(|p| p.values().clone()).collect(),
            known: masked[lo..hi].iter().map(|p| p.missing().map(|m| !m)).collect(),
        };
        for &axis in &params.order {
            stack.pass(axis);
        }
        let values = stack.values.swap_remove(i - lo);
        let known = &stack.known[i - lo];
        if known.iter().any(|k| !k) {
            return Err(Error::NoMeasurements(format!(
                "frame {i} has samples no interpolation pass could reach"
            )));
        }
        out.push(RxXmitPlane::new(values)?);
    }
    Ok(out)
}
