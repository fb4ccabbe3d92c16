//! Image quality scores: CNR, PSNR, SSIM, and a wall-clock harness.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Background and anechoic pixel sets, as `(row, col)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiSpec {
    background: Vec<(usize, usize)>,
    anechoic: Vec<(usize, usize)>,
}

impl RoiSpec {
    pub fn new(background: Vec<(usize, usize)>, anechoic: Vec<(usize, usize)>) -> Result<Self> {
        if background.is_empty() || anechoic.is_empty() {
            return Err(Error::config("ROIs must be nonempty"));
        }
        let mut bg = background.clone();
        bg.sort_unstable();
        if anechoic.iter().any(|p| bg.binary_search(p).is_ok()) {
            return Err(Error::config("ROIs must be disjoint"));
        }
        Ok(RoiSpec { background, anechoic })
    }

    /// Anechoic disk at `center` and a background annulus between
    /// `inner` and `outer` around it, clipped to the image.
    pub fn disk_and_ring(shape: (usize, usize), center: (f64, f64), radius: f64, inner: f64, outer: f64) -> Result<Self> {
        let mut background = Vec::new();
        let mut anechoic = Vec::new();
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let d = ((r as f64 - center.0).powi(2) + (c as f64 - center.1).powi(2)).sqrt();
                if d <= radius {
                    anechoic.push((r, c));
                } else if d >= inner && d <= outer {
                    background.push((r, c));
                }
            }
        }
        RoiSpec::new(background, anechoic)
    }

    pub fn background(&self) -> &[(usize, usize)] {
        &self.background
    }

    pub fn anechoic(&self) -> &[(usize, usize)] {
        &self.anechoic
    }
}

fn mean_std(image: &DMatrix<f64>, pixels: &[(usize, usize)]) -> Result<(f64, f64)> {
    let (n1, n2) = image.shape();
    let mut sum = 0.0;
    for &(r, c) in pixels {
        if r >= n1 || c >= n2 {
            return Err(Error::config(format!("ROI pixel ({r}, {c}) outside {n1}x{n2} image")));
        }
        sum += image[(r, c)];
    }
    let n = pixels.len() as f64;
    let mean = sum / n;
    let var = pixels.iter().map(|&p| (image[p] - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Contrast-to-noise ratio with population standard deviations.
/// Zero spread with distinct means gives `f64::INFINITY`.
pub fn cnr(image: &DMatrix<f64>, roi: &RoiSpec) -> Result<f64> {
    let (mb, sb) = mean_std(image, &roi.background)?;
    let (ma, sa) = mean_std(image, &roi.anechoic)?;
    let num = (mb - ma).abs();
    let den = (sb * sb + sa * sa).sqrt();
    Ok(if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    })
}

/// Peak signal-to-noise ratio in dB; identical images give `f64::INFINITY`.
pub fn psnr(reference: &DMatrix<f64>, test: &DMatrix<f64>, r_max: f64) -> Result<f64> {
    if reference.shape() != test.shape() {
        return Err(Error::shape(format!("{:?}", reference.shape()), format!("{:?}", test.shape())));
    }
    let err = (reference - test).norm_squared();
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    let n = reference.len() as f64;
    Ok(10.0 * (n * r_max * r_max / err).log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsimParams {
    pub k1: f64,
    pub k2: f64,
    pub r_max: f64,
    /// Radius of the uniform disk window, clipped at the image border.
    pub radius: usize,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            k1: 0.01,
            k2: 0.03,
            r_max: 255.0,
            radius: 50,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.r_max).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.r_max).powi(2)
    }
}

/// Sums of `fields` over the clipped disk around every pixel, from
/// per-row prefix sums.
struct DiskSums {
    half_widths: Vec<usize>,
    radius: usize,
}

impl DiskSums {
    fn new(radius: usize) -> Self {
        let r2 = (radius * radius) as f64;
        let half_widths = (0..=radius).map(|dy| (r2 - (dy * dy) as f64).sqrt().floor() as usize).collect();
        DiskSums { half_widths, radius }
    }

    /// `prefix[f]` has `n2 + 1` entries per row, stored row-major.
    fn sum(&self, prefix: &[f64], n1: usize, n2: usize, r: usize, c: usize) -> f64 {
        let lo_r = r.saturating_sub(self.radius);
        let hi_r = (r + self.radius).min(n1 - 1);
        let mut s = 0.0;
        for rr in lo_r..=hi_r {
            let w = self.half_widths[rr.abs_diff(r)];
            let lo = c.saturating_sub(w);
            let hi = (c + w).min(n2 - 1);
            let row = &prefix[rr * (n2 + 1)..];
            s += row[hi + 1] - row[lo];
        }
        s
    }

    fn count(&self, n1: usize, n2: usize, r: usize, c: usize) -> f64 {
        let lo_r = r.saturating_sub(self.radius);
        let hi_r = (r + self.radius).min(n1 - 1);
        (lo_r..=hi_r)
            .map(|rr| {
                let w = self.half_widths[rr.abs_diff(r)];
                ((c + w).min(n2 - 1) - c.saturating_sub(w) + 1) as f64
            })
            .sum()
    }
}

fn row_prefix(n1: usize, n2: usize, f: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; n1 * (n2 + 1)];
    for r in 0..n1 {
        let row = &mut out[r * (n2 + 1)..(r + 1) * (n2 + 1)];
        for c in 0..n2 {
            row[c + 1] = row[c] + f(r, c);
        }
    }
    out
}

/// Mean structural similarity over all pixel positions.
pub fn ssim(a: &DMatrix<f64>, b: &DMatrix<f64>, params: &SsimParams) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{:?}", a.shape()), format!("{:?}", b.shape())));
    }
    let (n1, n2) = a.shape();
    if n1 == 0 || n2 == 0 {
        return Err(Error::config("empty image"));
    }
    let disk = DiskSums::new(params.radius);
    let pa = row_prefix(n1, n2, |r, c| a[(r, c)]);
    let pb = row_prefix(n1, n2, |r, c| b[(r, c)]);
    let paa = row_prefix(n1, n2, |r, c| a[(r, c)] * a[(r, c)]);
    let pbb = row_prefix(n1, n2, |r, c| b[(r, c)] * b[(r, c)]);
    let pab = row_prefix(n1, n2, |r, c| a[(r, c)] * b[(r, c)]);
    let (c1, c2) = (params.c1(), params.c2());
    let mut total = 0.0;
    for r in 0..n1 {
        for c in 0..n2 {
            let n = disk.count(n1, n2, r, c);
            let ma = disk.sum(&pa, n1, n2, r, c) / n;
            let mb = disk.sum(&pb, n1, n2, r, c) / n;
            let va = (disk.sum(&paa, n1, n2, r, c) / n - ma * ma).max(0.0);
            let vb = (disk.sum(&pbb, n1, n2, r, c) / n - mb * mb).max(0.0);
            let cov = disk.sum(&pab, n1, n2, r, c) / n - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    Ok(total / (n1 * n2) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub median_ms: f64,
    pub mean_ms: f64,
    /// Per-plane milliseconds, one sample per repetition.
    pub samples_ms: Vec<f64>,
}

/// Run `method` over every plane `reps` times; each repetition yields one
/// per-plane time sample.
pub fn time_method<P, T>(planes: &[P], reps: usize, mut method: impl FnMut(&P) -> Result<T>) -> Result<TimingStats> {
    if reps == 0 || planes.is_empty() {
        return Err(Error::config("timing needs at least one plane and one repetition"));
    }
    let mut samples_ms = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        for p in planes {
            std::hint::black_box(method(p)?);
        }
        samples_ms.push(start.elapsed().as_secs_f64() * 1e3 / planes.len() as f64);
    }
    let mut sorted = samples_ms.clone();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let median_ms = if m % 2 == 1 {
        sorted[m / 2]
    } else {
        0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
    };
    let mean_ms = samples_ms.iter().sum::<f64>() / m as f64;
    Ok(TimingStats {
        median_ms,
        mean_ms,
        samples_ms,
    })
}
