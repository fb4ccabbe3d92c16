//! Multi-line scan-line synthesis, delay-and-sum beamforming and B-mode
//! display.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plane::RxXmitPlane;
use crate::simcore::{Geometry, ProbeConfig, RFCube};

pub const DEFAULT_DYNAMIC_RANGE_DB: f64 = 60.0;

/// Where a scan line comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlSource {
    /// Transmit event whose Rx record feeds the line.
    pub xmit: usize,
    /// Arc-length position (m) of that transmit axis.
    pub xmit_axis: f64,
    /// Lateral offset (m) of the line from the transmit axis.
    pub offset: f64,
}

impl SlSource {
    pub fn position(&self) -> f64 {
        self.xmit_axis + self.offset
    }
}

pub fn check_mla_factor(mla_factor: usize) -> Result<()> {
    if matches!(mla_factor, 1 | 2 | 4 | 8) {
        Ok(())
    } else {
        Err(Error::config(format!("MLA factor must be 1, 2, 4 or 8, got {mla_factor}")))
    }
}

/// Line layout for `config`: `mla_factor` lines per transmit event at
/// offsets `(i + 1/2 - m/2) * spacing / m`, ordered transmit-major so the
/// line index grows left to right.
pub fn mla_layout(config: &ProbeConfig, mla_factor: usize) -> Result<Vec<SlSource>> {
    check_mla_factor(mla_factor)?;
    let m = mla_factor as f64;
    let step = config.xmit_spacing() / m;
    let mut out = Vec::with_capacity(config.num_xmit * mla_factor);
    for k in 0..config.num_xmit {
        for i in 0..mla_factor {
            out.push(SlSource {
                xmit: k,
                xmit_axis: config.xmit_axis(k),
                offset: (i as f64 + 0.5 - m / 2.0) * step,
            });
        }
    }
    Ok(out)
}

/// Receive data arranged by scan line: `[depth x Rx x SL]`, depth fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct RxSLCube {
    data: Vec<f32>,
    depth: usize,
    num_rx: usize,
    mla_factor: usize,
    provenance: Vec<SlSource>,
}

impl RxSLCube {
    pub fn new(data: Vec<f32>, depth: usize, num_rx: usize, mla_factor: usize, provenance: Vec<SlSource>) -> Result<Self> {
        check_mla_factor(mla_factor)?;
        let expected = depth * num_rx * provenance.len();
        if data.len() != expected {
            return Err(Error::shape(expected.to_string(), data.len().to_string()));
        }
        if provenance.len() % mla_factor != 0 {
            return Err(Error::config("SL count must be a multiple of the MLA factor"));
        }
        Ok(RxSLCube {
            data,
            depth,
            num_rx,
            mla_factor,
            provenance,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn num_rx(&self) -> usize {
        self.num_rx
    }

    pub fn num_sl(&self) -> usize {
        self.provenance.len()
    }

    pub fn mla_factor(&self) -> usize {
        self.mla_factor
    }

    pub fn provenance(&self) -> &[SlSource] {
        &self.provenance
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Replace the line geometry, keeping the data; the line count must match.
    pub fn with_provenance(mut self, provenance: Vec<SlSource>, mla_factor: usize) -> Result<Self> {
        check_mla_factor(mla_factor)?;
        if provenance.len() != self.provenance.len() {
            return Err(Error::shape(self.provenance.len().to_string(), provenance.len().to_string()));
        }
        self.provenance = provenance;
        self.mla_factor = mla_factor;
        Ok(self)
    }

    pub fn trace(&self, rx: usize, sl: usize) -> &[f32] {
        let start = (sl * self.num_rx + rx) * self.depth;
        &self.data[start..start + self.depth]
    }

    /// Rx-SL plane at one depth sample.
    pub fn plane(&self, depth: usize) -> RxXmitPlane {
        RxXmitPlane::from_fn(self.num_rx, self.num_sl(), |r, s| {
            self.data[(s * self.num_rx + r) * self.depth + depth] as f64
        })
    }

    pub fn set_plane(&mut self, depth: usize, plane: &RxXmitPlane) -> Result<()> {
        if plane.shape() != (self.num_rx, self.num_sl()) || depth >= self.depth {
            return Err(Error::shape(
                format!("{}x{} at depth < {}", self.num_rx, self.num_sl(), self.depth),
                format!("{:?} at depth {depth}", plane.shape()),
            ));
        }
        for s in 0..self.num_sl() {
            for r in 0..self.num_rx {
                self.data[(s * self.num_rx + r) * self.depth + depth] = plane.values()[(r, s)] as f32;
            }
        }
        Ok(())
    }
}

/// Replicate each transmit's Rx record into `mla_factor` scan lines.
pub fn synthesize_scan_lines(cube: &RFCube, mla_factor: usize) -> Result<RxSLCube> {
    let provenance = mla_layout(cube.config(), mla_factor)?;
    let (depth, num_rx, _) = cube.dims();
    let mut data = Vec::with_capacity(depth * num_rx * provenance.len());
    for src in &provenance {
        for r in 0..num_rx {
            data.extend_from_slice(cube.trace(r, src.xmit));
        }
    }
    RxSLCube::new(data, depth, num_rx, mla_factor, provenance)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleInterp {
    #[default]
    Linear,
    Nearest,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DasParams {
    pub interp: SampleInterp,
}

pub fn das_beamform(cube: &RxSLCube, config: &ProbeConfig) -> Result<DMatrix<f64>> {
    das_beamform_with(cube, config, &DasParams::default())
}

/// Dynamic receive focusing with rectangular apodization. Each image point
/// lies on the line launched normally from its SL position; its delay is
/// the transmit travel along the transmit axis plus the return path to
/// every receive element.
pub fn das_beamform_with(cube: &RxSLCube, config: &ProbeConfig, params: &DasParams) -> Result<DMatrix<f64>> {
    config.validate()?;
    if cube.num_rx() != config.num_rx_active || cube.depth() != config.depth_samples {
        return Err(Error::shape(
            format!("{} depth x {} Rx", config.depth_samples, config.num_rx_active),
            format!("{} depth x {} Rx", cube.depth(), cube.num_rx()),
        ));
    }
    let nd = cube.depth();
    let c = config.sound_speed;
    let fs = config.sampling_freq;
    let mut image = DMatrix::zeros(nd, cube.num_sl());
    let mut elements = Vec::with_capacity(cube.num_rx());
    for (sl, src) in cube.provenance().iter().enumerate() {
        let (ox, oz) = config.surface_point(src.xmit_axis);
        let (ux, uz) = config.surface_normal(src.xmit_axis);
        elements.clear();
        for r in 0..cube.num_rx() {
            let s = src.xmit_axis + config.rx_offset(r);
            if config.element_exists(s) {
                elements.push((r, config.surface_point(s)));
            }
        }
        let pos = src.position();
        let mut col = image.column_mut(sl);
        for i in 0..nd {
            let (px, pz) = config.beam_point(pos, config.sample_depth(i as f64));
            let tau_tx = ((px - ox) * ux + (pz - oz) * uz) / c;
            let mut acc = 0.0;
            for &(r, (ex, ez)) in &elements {
                let dist = ((px - ex).powi(2) + (pz - ez).powi(2)).sqrt();
                let t = (tau_tx + dist / c) * fs;
                let trace = cube.trace(r, sl);
                acc += match params.interp {
                    SampleInterp::Linear => {
                        let k = t.floor();
                        if k < 0.0 || k as usize + 1 >= nd {
                            0.0
                        } else {
                            let k0 = k as usize;
                            let f = t - k;
                            trace[k0] as f64 * (1.0 - f) + trace[k0 + 1] as f64 * f
                        }
                    }
                    SampleInterp::Nearest => {
                        let k = t.round();
                        if k < 0.0 || k as usize >= nd {
                            0.0
                        } else {
                            trace[k as usize] as f64
                        }
                    }
                };
            }
            col[i] = acc;
        }
    }
    Ok(image)
}

/// Magnitude of the analytic signal, built in the frequency domain.
pub fn envelope(signal: &[f64], planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = signal.len();
    if n == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let weight = if k == 0 || (n % 2 == 0 && k == n / 2) {
            1.0
        } else if k < (n + 1) / 2 {
            2.0
        } else {
            0.0
        };
        *v *= weight;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|v| v.norm() / n as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ImageGeometry {
    /// Rows are depth samples, columns scan lines.
    Linear,
    /// Convex-probe image; `scan_converted` means rows and columns are
    /// Cartesian pixels rather than depth and scan line.
    Convex { scan_converted: bool },
}

/// Log-compressed envelope image in dB, within `[-dynamic_range, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BModeImage {
    pub pixels: DMatrix<f64>,
    pub dynamic_range: f64,
    pub geometry: ImageGeometry,
    /// Set when the input had no energy.
    pub degenerate: bool,
}

#[derive(Serialize, Deserialize)]
struct BModeSidecar {
    rows: usize,
    cols: usize,
    dynamic_range_db: f64,
    geometry: ImageGeometry,
    degenerate: bool,
}

pub fn envelope_and_log(beamformed: &DMatrix<f64>, dynamic_range: f64, geometry: ImageGeometry) -> Result<BModeImage> {
    if !(dynamic_range > 0.0) {
        return Err(Error::config("dynamic range must be positive"));
    }
    if beamformed.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("beamformed data contains non-finite values".into()));
    }
    let mut planner = FftPlanner::new();
    let (nd, ns) = beamformed.shape();
    let mut env = DMatrix::zeros(nd, ns);
    for s in 0..ns {
        let col: Vec<f64> = beamformed.column(s).iter().copied().collect();
        env.column_mut(s).copy_from_slice(&envelope(&col, &mut planner));
    }
    let peak = env.max();
    if !(peak > 0.0) {
        return Ok(BModeImage {
            pixels: DMatrix::from_element(nd, ns, -dynamic_range),
            dynamic_range,
            geometry,
            degenerate: true,
        });
    }
    let pixels = env.map(|e| (20.0 * (e / peak).log10()).max(-dynamic_range));
    Ok(BModeImage {
        pixels,
        dynamic_range,
        geometry,
        degenerate: false,
    })
}

impl BModeImage {
    /// 8-bit gray levels: `-dynamic_range` dB maps to 0, 0 dB to 255.
    pub fn to_gray8(&self) -> DMatrix<u8> {
        self.pixels
            .map(|db| (((db + self.dynamic_range) / self.dynamic_range).clamp(0.0, 1.0) * 255.0).round() as u8)
    }

    /// Gray levels as reals, for the 8-bit metrics.
    pub fn gray_levels(&self) -> DMatrix<f64> {
        self.to_gray8().map(f64::from)
    }

    /// Binary PGM plus a `.json` sidecar with range and geometry.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let gray = self.to_gray8();
        let (rows, cols) = gray.shape();
        let mut w = BufWriter::new(File::create(path)?);
        write!(w, "P5\n{cols} {rows}\n255\n")?;
        let mut line = vec![0u8; cols];
        for r in 0..rows {
            for (c, v) in line.iter_mut().enumerate() {
                *v = gray[(r, c)];
            }
            w.write_all(&line)?;
        }
        w.flush()?;
        let sidecar = BModeSidecar {
            rows,
            cols,
            dynamic_range_db: self.dynamic_range,
            geometry: self.geometry,
            degenerate: self.degenerate,
        };
        std::fs::write(path.with_extension("json"), serde_json::to_vec_pretty(&sidecar)?)?;
        Ok(())
    }

    /// Polar-to-Cartesian resampling of a convex-probe image onto a
    /// `rows x cols` grid covering the imaged sector; bilinear, with
    /// points outside the sector at `-dynamic_range`.
    pub fn scan_convert(&self, config: &ProbeConfig, lines: &[SlSource], rows: usize, cols: usize) -> Result<BModeImage> {
        let Geometry::Convex { radius } = config.geometry else {
            return Err(Error::config("scan conversion applies to convex geometry only"));
        };
        if self.geometry != (ImageGeometry::Convex { scan_converted: false }) {
            return Err(Error::config("image is not an unconverted convex image"));
        }
        let (nd, ns) = self.pixels.shape();
        if lines.len() != ns || ns < 2 || rows < 2 || cols < 2 {
            return Err(Error::shape(ns.to_string(), lines.len().to_string()));
        }
        let s0 = lines[0].position();
        let ds = (lines[ns - 1].position() - s0) / (ns - 1) as f64;
        let max_depth = config.sample_depth((nd - 1) as f64);
        let th_max = (s0.abs().max((s0 + ds * (ns - 1) as f64).abs())) / radius;
        let x_half = (radius + max_depth) * th_max.sin();
        let z_top = radius * th_max.cos() - radius;
        let z_bot = max_depth;
        let mut pixels = DMatrix::from_element(rows, cols, -self.dynamic_range);
        for r in 0..rows {
            let z = z_top + (z_bot - z_top) * r as f64 / (rows - 1) as f64;
            for c in 0..cols {
                let x = -x_half + 2.0 * x_half * c as f64 / (cols - 1) as f64;
                let depth = (x * x + (z + radius).powi(2)).sqrt() - radius;
                let s = radius * x.atan2(z + radius);
                let fi = depth * 2.0 / config.sound_speed * config.sampling_freq;
                let fj = (s - s0) / ds;
                if fi < 0.0 || fj < 0.0 || fi > (nd - 1) as f64 || fj > (ns - 1) as f64 {
                    continue;
                }
                let (i0, j0) = ((fi.floor() as usize).min(nd - 2), (fj.floor() as usize).min(ns - 2));
                let (a, b) = (fi - i0 as f64, fj - j0 as f64);
                let p = &self.pixels;
                pixels[(r, c)] = (1.0 - a) * (1.0 - b) * p[(i0, j0)]
                    + a * (1.0 - b) * p[(i0 + 1, j0)]
                    + (1.0 - a) * b * p[(i0, j0 + 1)]
                    + a * b * p[(i0 + 1, j0 + 1)];
                pixels[(r, c)] = pixels[(r, c)].clamp(-self.dynamic_range, 0.0);
            }
        }
        Ok(BModeImage {
            pixels,
            dynamic_range: self.dynamic_range,
            geometry: ImageGeometry::Convex { scan_converted: true },
            degenerate: self.degenerate,
        })
    }
}

/// Scan lines, DAS and log compression in one call.
pub fn bmode_from_cube(cube: &RxSLCube, config: &ProbeConfig, dynamic_range: f64) -> Result<BModeImage> {
    let beamformed = das_beamform(cube, config)?;
    let geometry = match config.geometry {
        Geometry::Linear => ImageGeometry::Linear,
        Geometry::Convex { .. } => ImageGeometry::Convex { scan_converted: false },
    };
    envelope_and_log(&beamformed, dynamic_range, geometry)
}
