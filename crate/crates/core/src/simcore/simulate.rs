use crate::error::{Error, Result};
use crate::plane::RxXmitPlane;

use super::config::{Geometry, ProbeConfig, PulseSpec};
use super::phantom::Phantom;

/// Raw RF samples indexed `[depth, rx, xmit]`, depth fastest. Samples are
/// stored in single precision, matching the on-disk format.
#[derive(Debug, Clone, PartialEq)]
pub struct RFCube {
    data: Vec<f32>,
    config: ProbeConfig,
    pub frame_index: usize,
}

impl RFCube {
    pub fn zeros(config: ProbeConfig, frame_index: usize) -> Result<Self> {
        config.validate()?;
        let len = config.depth_samples * config.num_rx_active * config.num_xmit;
        Ok(RFCube {
            data: vec![0.0; len],
            config,
            frame_index,
        })
    }

    pub fn from_data(config: ProbeConfig, data: Vec<f32>, frame_index: usize) -> Result<Self> {
        config.validate()?;
        let len = config.depth_samples * config.num_rx_active * config.num_xmit;
        if data.len() != len {
            return Err(Error::shape(len, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("RF cube contains non-finite samples".into()));
        }
        Ok(RFCube {
            data,
            config,
            frame_index,
        })
    }

    pub fn config(&self) -> &ProbeConfig {
        &self.config
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (
            self.config.depth_samples,
            self.config.num_rx_active,
            self.config.num_xmit,
        )
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    fn index(&self, depth: usize, rx: usize, xmit: usize) -> usize {
        let (nd, nr, _) = self.dims();
        depth + nd * (rx + nr * xmit)
    }

    pub fn get(&self, depth: usize, rx: usize, xmit: usize) -> f64 {
        self.data[self.index(depth, rx, xmit)] as f64
    }

    pub fn trace(&self, rx: usize, xmit: usize) -> &[f32] {
        let start = self.index(0, rx, xmit);
        &self.data[start..start + self.config.depth_samples]
    }

    pub fn trace_mut(&mut self, rx: usize, xmit: usize) -> &mut [f32] {
        let start = self.index(0, rx, xmit);
        let nd = self.config.depth_samples;
        &mut self.data[start..start + nd]
    }

    /// The Rx-Xmit plane at one depth sample.
    pub fn plane(&self, depth: usize) -> RxXmitPlane {
        let (_, nr, nx) = self.dims();
        RxXmitPlane::from_fn(nr, nx, |r, k| self.get(depth, r, k))
    }

    pub fn set_plane(&mut self, depth: usize, plane: &RxXmitPlane) -> Result<()> {
        let (_, nr, nx) = self.dims();
        if plane.shape() != (nr, nx) {
            return Err(Error::shape(format!("{nr}x{nx}"), format!("{:?}", plane.shape())));
        }
        for k in 0..nx {
            for r in 0..nr {
                let idx = self.index(depth, r, k);
                self.data[idx] = plane.values()[(r, k)] as f32;
            }
        }
        Ok(())
    }

    /// Keep only the given transmit columns; the result's beam grid is
    /// `xmit_stride * step` with the first kept column at index 0.
    pub fn decimate_xmit(&self, step: usize) -> Result<RFCube> {
        let nx = self.config.num_xmit;
        if step == 0 || nx % step != 0 {
            return Err(Error::config(format!("xmit step {step} does not divide {nx}")));
        }
        let config = ProbeConfig {
            num_xmit: nx / step,
            xmit_stride: self.config.xmit_stride * step,
            ..self.config.clone()
        };
        let per_xmit = self.config.depth_samples * self.config.num_rx_active;
        let mut data = Vec::with_capacity(per_xmit * config.num_xmit);
        for k in (0..nx).step_by(step) {
            data.extend_from_slice(&self.data[k * per_xmit..(k + 1) * per_xmit]);
        }
        RFCube::from_data(config, data, self.frame_index)
    }
}

/// Tabulated pulse with linear interpolation between taps.
struct PulseTable {
    taps: Vec<f64>,
    step: f64,
    half: f64,
}

impl PulseTable {
    const OVERSAMPLE: f64 = 256.0;

    fn new(pulse: &PulseSpec, sampling_freq: f64) -> Self {
        let step = 1.0 / (sampling_freq * Self::OVERSAMPLE);
        let half = pulse.support();
        let n = (2.0 * half / step).ceil() as usize + 2;
        let taps = (0..n).map(|i| pulse.eval(i as f64 * step - half)).collect();
        PulseTable { taps, step, half }
    }

    #[inline]
    fn eval(&self, t: f64) -> f64 {
        let u = (t + self.half) / self.step;
        if u < 0.0 {
            return 0.0;
        }
        let i = u as usize;
        if i + 1 >= self.taps.len() {
            return 0.0;
        }
        let f = u - i as f64;
        self.taps[i] * (1.0 - f) + self.taps[i + 1] * f
    }
}

/// Single-scattering pulse-echo simulation.
///
/// For transmit event `k` the beam is launched normally from the array at
/// its axis. A scatterer at along-beam depth `d` and lateral distance `l`
/// receives the transmit wave at `tau_tx = d / c` with Gaussian lateral
/// weight `w_tx(l, d)`; channel `r` records it at `tau_tx + |p - e_r| / c`,
/// scaled by the element directivity.
pub fn simulate_rf(phantom: &Phantom, config: &ProbeConfig, pulse: &PulseSpec) -> Result<RFCube> {
    config.validate()?;
    pulse.validate()?;
    let max_depth = config.max_depth();
    for s in &phantom.scatterers {
        let depth = scatterer_depth(config, s.x, s.z);
        // depth along the surface normal, so convex edges may sit above z = 0
        if !(depth > 0.0) || !s.x.is_finite() || !s.reflectivity.is_finite() {
            return Err(Error::config(format!(
                "scatterer at ({}, {}) must lie in front of the array with finite fields",
                s.x, s.z
            )));
        }
        if depth > max_depth {
            return Err(Error::OutOfRange { depth, max_depth });
        }
    }

    let mut cube = RFCube::zeros(config.clone(), 0)?;
    let table = PulseTable::new(pulse, config.sampling_freq);
    let c = config.sound_speed;
    let fs = config.sampling_freq;
    let nd = config.depth_samples;
    let lambda = config.wavelength();
    let focus = config.focus_depth();
    let fnum = config.tx_f_number;
    // Gaussian beam: -6 dB width lambda * F# at focus, widening with the aperture cone
    let sigma_focus = lambda * fnum / 2.355;
    let cone = 1.0 / (2.0 * fnum * 1.177);
    let support = table.half;

    for k in 0..config.num_xmit {
        let axis = config.xmit_axis(k);
        let (ox, oz) = config.surface_point(axis);
        let (ux, uz) = config.surface_normal(axis);
        // channel-major accumulation so each trace is rounded to f32 once
        let mut traces = vec![0.0f64; config.depth_samples * config.num_rx_active];
        for s in &phantom.scatterers {
            if s.reflectivity == 0.0 {
                continue;
            }
            let (px, pz) = (s.x - ox, s.z - oz);
            let along = px * ux + pz * uz;
            let lateral = px * uz - pz * ux;
            let sigma = (sigma_focus.powi(2) + (cone * (along - focus)).powi(2)).sqrt();
            let q = lateral / sigma;
            if q.abs() > 4.3 {
                continue;
            }
            let w_tx = (-0.5 * q * q).exp();
            let tau_tx = along / c;
            for r in 0..config.num_rx_active {
                let se = axis + config.rx_offset(r);
                if !config.element_exists(se) {
                    continue;
                }
                let (ex, ez) = config.surface_point(se);
                let (nx, nz) = config.surface_normal(se);
                let (dx, dz) = (s.x - ex, s.z - ez);
                let dist = (dx * dx + dz * dz).sqrt();
                let cos_t = (dx * nx + dz * nz) / dist;
                if cos_t <= 0.0 {
                    continue;
                }
                let dir = directivity(config.element_width, lambda, cos_t);
                let amp = s.reflectivity * w_tx * dir;
                let tau = tau_tx + dist / c;
                let lo = ((tau - support) * fs).ceil().max(0.0) as usize;
                let hi = (((tau + support) * fs).floor() as isize).min(nd as isize - 1);
                if hi < lo as isize {
                    continue;
                }
                let trace = &mut traces[r * nd..(r + 1) * nd];
                for (i, v) in trace.iter_mut().enumerate().take(hi as usize + 1).skip(lo) {
                    *v += amp * table.eval(i as f64 / fs - tau);
                }
            }
        }
        for r in 0..config.num_rx_active {
            let src = &traces[r * nd..(r + 1) * nd];
            for (dst, &src) in cube.trace_mut(r, k).iter_mut().zip(src) {
                *dst = src as f32;
            }
        }
    }
    Ok(cube)
}

/// Soft-baffle element directivity `sinc(pi w sin(theta) / lambda) cos(theta)`.
fn directivity(width: f64, lambda: f64, cos_t: f64) -> f64 {
    if width == 0.0 {
        return 1.0;
    }
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    let a = std::f64::consts::PI * width * sin_t / lambda;
    let sinc = if a.abs() < 1e-12 { 1.0 } else { a.sin() / a };
    sinc * cos_t
}

/// Distance from the array surface along the local beam direction.
fn scatterer_depth(config: &ProbeConfig, x: f64, z: f64) -> f64 {
    match config.geometry {
        Geometry::Linear => z,
        Geometry::Convex { radius } => (x * x + (z + radius).powi(2)).sqrt() - radius,
    }
}

#[cfg(test)]
mod tests {
    use super::super::phantom::PhantomSpec;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> ProbeConfig {
        ProbeConfig {
            depth_samples: 256,
            num_xmit: 16,
            num_rx_active: 16,
            num_elements: 48,
            ..ProbeConfig::default()
        }
    }

    fn argmax(v: &[f32]) -> usize {
        v.iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap()
            .0
    }

    #[test]
    fn empty_phantom_gives_zero_cube() {
        let cfg = small_config();
        let cube = simulate_rf(&Phantom::empty(), &cfg, &PulseSpec::for_probe(&cfg)).unwrap();
        assert!(cube.data().iter().all(|&v| v == 0.0));
        assert_eq!(cube.dims(), (256, 16, 16));
    }

    #[test]
    fn on_axis_echo_peaks_at_two_way_delay() {
        let cfg = small_config();
        let k = 7;
        let z0 = 3.1e-3;
        let phantom = Phantom::point(cfg.xmit_axis(k), z0, 1.0);
        let cube = simulate_rf(&phantom, &cfg, &PulseSpec::for_probe(&cfg)).unwrap();
        let center = cfg.num_rx_active / 2;
        let peak = argmax(cube.trace(center, k));
        // 2 * 3.1 mm / 1540 m/s * 40 MHz = 161.04 samples
        let expected = (2.0 * z0 / cfg.sound_speed * cfg.sampling_freq).round() as usize;
        assert_eq!(expected, 161);
        assert!((peak as isize - expected as isize).abs() <= 1, "peak {peak}");
    }

    #[test]
    fn doubling_reflectivity_doubles_samples_exactly() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = PhantomSpec {
            num_speckle: 60,
            ..PhantomSpec::default()
        };
        let p = Phantom::random(&cfg, &spec, &mut rng);
        let pulse = PulseSpec::for_probe(&cfg);
        let a = simulate_rf(&p, &cfg, &pulse).unwrap();
        let b = simulate_rf(&p.scaled(2.0), &cfg, &pulse).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| 2.0 * x == *y));
        assert!(a.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn superposition_of_phantoms() {
        let cfg = small_config();
        let pulse = PulseSpec::for_probe(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = PhantomSpec {
            num_speckle: 40,
            ..PhantomSpec::default()
        };
        let a = Phantom::random(&cfg, &spec, &mut rng);
        let b = Phantom::random(&cfg, &spec, &mut rng);
        let ab = simulate_rf(&a.union(&b), &cfg, &pulse).unwrap();
        let sa = simulate_rf(&a, &cfg, &pulse).unwrap();
        let sb = simulate_rf(&b, &cfg, &pulse).unwrap();
        let scale = ab.data().iter().fold(0.0f32, |m, v| m.max(v.abs()));
        for ((x, y), z) in ab.data().iter().zip(sa.data()).zip(sb.data()) {
            assert!((x - y - z).abs() <= 4.0 * f32::EPSILON * scale);
        }
    }

    #[test]
    fn lateral_shift_by_one_pitch_shifts_rx_pattern() {
        let cfg = small_config();
        let pulse = PulseSpec::for_probe(&cfg);
        let k = 8;
        let x0 = cfg.xmit_axis(k) + 0.5 * cfg.pitch;
        let z0 = 2.5e-3;
        let a = simulate_rf(&Phantom::point(x0, z0, 1.0), &cfg, &pulse).unwrap();
        let b = simulate_rf(&Phantom::point(x0 + cfg.pitch, z0, 1.0), &cfg, &pulse).unwrap();
        for r in 2..cfg.num_rx_active - 2 {
            let pa = argmax(a.trace(r, k));
            let pb = argmax(b.trace(r + 1, k));
            assert_eq!(pa, pb, "channel {r}");
        }
    }

    #[test]
    fn scatterers_beyond_imaged_depth_are_reported() {
        let cfg = small_config();
        let too_deep = Phantom::point(0.0, cfg.max_depth() * 1.01, 1.0);
        let err = simulate_rf(&too_deep, &cfg, &PulseSpec::for_probe(&cfg)).unwrap_err();
        assert!(matches!(err, Error::OutOfRange { .. }));
        let zero_depth = ProbeConfig {
            depth_samples: 0,
            ..cfg
        };
        assert!(simulate_rf(&Phantom::empty(), &zero_depth, &PulseSpec::for_probe(&zero_depth)).is_err());
    }

    #[test]
    fn convex_edges_accept_shallow_scatterers_above_the_apex() {
        let cfg = ProbeConfig {
            geometry: Geometry::Convex { radius: 20e-3 },
            ..small_config()
        };
        let pulse = PulseSpec::for_probe(&cfg);
        let edge = (cfg.num_elements as f64 - 1.0) / 2.0 * cfg.pitch;
        let (x, z) = cfg.beam_point(edge, 0.5e-3);
        assert!(z < 0.0);
        assert!(simulate_rf(&Phantom::point(x, z, 1.0), &cfg, &pulse).is_ok());
        // behind the apex is behind the array
        assert!(simulate_rf(&Phantom::point(0.0, -0.5e-3, 1.0), &cfg, &pulse).is_err());
    }

    #[test]
    fn simulation_is_deterministic() {
        let cfg = ProbeConfig {
            geometry: Geometry::Convex { radius: 40e-3 },
            ..small_config()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = Phantom::random(
            &cfg,
            &PhantomSpec {
                num_speckle: 50,
                ..PhantomSpec::default()
            },
            &mut rng,
        );
        let pulse = PulseSpec::for_probe(&cfg);
        assert_eq!(simulate_rf(&p, &cfg, &pulse).unwrap(), simulate_rf(&p, &cfg, &pulse).unwrap());
    }

    #[test]
    fn decimation_keeps_every_other_beam() {
        let cfg = small_config();
        let p = Phantom::point(cfg.xmit_axis(4), 2e-3, 1.0);
        let pulse = PulseSpec::for_probe(&cfg);
        let full = simulate_rf(&p, &cfg, &pulse).unwrap();
        let half = full.decimate_xmit(2).unwrap();
        let direct = simulate_rf(&p, half.config(), &pulse).unwrap();
        assert_eq!(half.data(), direct.data());
        assert!(full.decimate_xmit(3).is_err());
    }
}
