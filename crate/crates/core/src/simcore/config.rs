use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Geometry {
    Linear,
    /// Elements on an arc of the given radius (meters); beams fan out radially.
    Convex { radius: f64 },
}

/// Acquisition geometry. Defaults follow the linear probe of the reference
/// system at desk scale (512 depth samples).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub num_elements: usize,
    pub num_rx_active: usize,
    pub num_xmit: usize,
    /// meters
    pub pitch: f64,
    /// Hz
    pub carrier_freq: f64,
    /// Hz
    pub sampling_freq: f64,
    /// m/s
    pub sound_speed: f64,
    pub depth_samples: usize,
    pub geometry: Geometry,
    /// Element-slot spacing between consecutive transmit events in this cube.
    pub xmit_stride: usize,
    /// Transmit focal depth in meters; `None` focuses at half the imaged depth.
    pub tx_focus_depth: Option<f64>,
    /// Transmit F-number; sets the focal beam width and its divergence.
    pub tx_f_number: f64,
    /// Element width in meters for the receive directivity; 0 disables it.
    pub element_width: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            num_elements: 192,
            num_rx_active: 64,
            num_xmit: 96,
            pitch: 0.2e-3,
            carrier_freq: 8.48e6,
            sampling_freq: 40e6,
            sound_speed: 1540.0,
            depth_samples: 512,
            geometry: Geometry::Linear,
            xmit_stride: 1,
            tx_focus_depth: None,
            tx_f_number: 2.0,
            element_width: 0.14e-3,
        }
    }
}

impl ProbeConfig {
    /// The convex probe column of the reference system.
    pub fn convex() -> Self {
        ProbeConfig {
            carrier_freq: 3.2e6,
            pitch: 0.348e-3,
            element_width: 0.26e-3,
            geometry: Geometry::Convex { radius: 60e-3 },
            ..ProbeConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_elements", self.num_elements),
            ("num_rx_active", self.num_rx_active),
            ("num_xmit", self.num_xmit),
            ("depth_samples", self.depth_samples),
            ("xmit_stride", self.xmit_stride),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.num_rx_active > self.num_elements {
            return Err(Error::config(format!(
                "num_rx_active {} exceeds num_elements {}",
                self.num_rx_active, self.num_elements
            )));
        }
        let physical = [
            ("pitch", self.pitch),
            ("carrier_freq", self.carrier_freq),
            ("sampling_freq", self.sampling_freq),
            ("sound_speed", self.sound_speed),
            ("tx_f_number", self.tx_f_number),
        ];
        for (name, v) in physical {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.element_width >= 0.0) {
            return Err(Error::config("element_width must be non-negative"));
        }
        if self.sampling_freq <= 2.0 * self.carrier_freq {
            return Err(Error::config(format!(
                "sampling_freq {} must exceed twice the carrier {}",
                self.sampling_freq, self.carrier_freq
            )));
        }
        if let Some(f) = self.tx_focus_depth {
            if !(f > 0.0) {
                return Err(Error::config("tx_focus_depth must be positive"));
            }
        }
        if let Geometry::Convex { radius } = self.geometry {
            if !(radius > 0.0) {
                return Err(Error::config("convex radius must be positive"));
            }
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        self.sound_speed / self.carrier_freq
    }

    /// Depth (m) covered by the recorded two-way time window.
    pub fn max_depth(&self) -> f64 {
        self.depth_samples as f64 / self.sampling_freq * self.sound_speed / 2.0
    }

    /// Depth (m) of depth-sample `i` assuming two-way travel along the beam.
    pub fn sample_depth(&self, i: f64) -> f64 {
        i / self.sampling_freq * self.sound_speed / 2.0
    }

    pub fn focus_depth(&self) -> f64 {
        self.tx_focus_depth.unwrap_or(0.5 * self.max_depth())
    }

    /// Lateral slot coordinate (in pitches) of transmit event `k`, centered on the array.
    pub fn xmit_slot(&self, k: usize) -> f64 {
        (k * self.xmit_stride) as f64 - ((self.num_xmit * self.xmit_stride) as f64 - 1.0) / 2.0
    }

    /// Lateral arc-length position (m) of the beam axis of transmit event `k`.
    pub fn xmit_axis(&self, k: usize) -> f64 {
        self.xmit_slot(k) * self.pitch
    }

    /// Spacing (m) between the axes of consecutive transmit events.
    pub fn xmit_spacing(&self) -> f64 {
        self.xmit_stride as f64 * self.pitch
    }

    /// Arc-length offset of receive channel `r` from the beam axis; channel
    /// `num_rx_active / 2` sits on the axis.
    pub fn rx_offset(&self, r: usize) -> f64 {
        (r as f64 - (self.num_rx_active / 2) as f64) * self.pitch
    }

    /// Whether an element exists at arc-length position `s`.
    pub fn element_exists(&self, s: f64) -> bool {
        let half = (self.num_elements as f64 - 1.0) / 2.0 * self.pitch;
        s.abs() <= half + 1e-9 * self.pitch
    }

    /// Cartesian position (x, z) of the array surface at arc-length `s`.
    pub fn surface_point(&self, s: f64) -> (f64, f64) {
        match self.geometry {
            Geometry::Linear => (s, 0.0),
            Geometry::Convex { radius } => {
                let th = s / radius;
                (radius * th.sin(), radius * th.cos() - radius)
            }
        }
    }

    /// Outward unit normal of the array surface at arc-length `s`.
    pub fn surface_normal(&self, s: f64) -> (f64, f64) {
        match self.geometry {
            Geometry::Linear => (0.0, 1.0),
            Geometry::Convex { radius } => {
                let th = s / radius;
                (th.sin(), th.cos())
            }
        }
    }

    /// Point at `depth` along the beam launched normally from arc-length `s`.
    pub fn beam_point(&self, s: f64, depth: f64) -> (f64, f64) {
        let (x0, z0) = self.surface_point(s);
        let (nx, nz) = self.surface_normal(s);
        (x0 + depth * nx, z0 + depth * nz)
    }
}

/// Gaussian-windowed cosine excitation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    /// Center frequency (Hz).
    pub center_freq: f64,
    /// -6 dB bandwidth divided by the center frequency.
    pub fractional_bandwidth: f64,
}

impl PulseSpec {
    pub fn for_probe(config: &ProbeConfig) -> Self {
        PulseSpec {
            center_freq: config.carrier_freq,
            fractional_bandwidth: 0.6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.center_freq > 0.0) || !(self.fractional_bandwidth > 0.0) {
            return Err(Error::config("pulse frequency and bandwidth must be positive"));
        }
        Ok(())
    }

    /// Standard deviation (s) of the Gaussian envelope.
    pub fn sigma_t(&self) -> f64 {
        // amplitude spectrum exp(-f^2 / 2 sf^2) falls to 1/2 at sf * sqrt(2 ln 2)
        let bw = self.fractional_bandwidth * self.center_freq;
        let sigma_f = bw / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
        1.0 / (2.0 * std::f64::consts::PI * sigma_f)
    }

    /// Half-length (s) beyond which the envelope is below 1e-4.
    pub fn support(&self) -> f64 {
        4.3 * self.sigma_t()
    }

    pub fn eval(&self, t: f64) -> f64 {
        let s = self.sigma_t();
        (-0.5 * (t / s).powi(2)).exp() * (2.0 * std::f64::consts::PI * self.center_freq * t).cos()
    }
}
