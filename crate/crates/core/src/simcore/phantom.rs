use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::ProbeConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    /// Lateral position (m); 0 is the array center.
    pub x: f64,
    /// Axial position (m), positive into the medium.
    pub z: f64,
    pub reflectivity: f64,
}

/// Anechoic disk in beam coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cyst {
    /// Arc-length position (m) along the array.
    pub s: f64,
    /// Depth (m) along the beam.
    pub depth: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Phantom {
    pub scatterers: Vec<Scatterer>,
    /// Scatterer-free regions, kept for contrast measurements.
    #[serde(default)]
    pub cysts: Vec<Cyst>,
}

impl Phantom {
    pub fn new(scatterers: Vec<Scatterer>) -> Self {
        Phantom {
            scatterers,
            cysts: Vec::new(),
        }
    }

    pub fn empty() -> Self {
        Phantom::default()
    }

    pub fn point(x: f64, z: f64, reflectivity: f64) -> Self {
        Phantom::new(vec![Scatterer { x, z, reflectivity }])
    }

    pub fn len(&self) -> usize {
        self.scatterers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scatterers.is_empty()
    }

    pub fn union(&self, other: &Phantom) -> Phantom {
        let mut s = self.scatterers.clone();
        s.extend_from_slice(&other.scatterers);
        let mut cysts = self.cysts.clone();
        cysts.extend_from_slice(&other.cysts);
        Phantom { scatterers: s, cysts }
    }

    pub fn scaled(&self, factor: f64) -> Phantom {
        Phantom {
            scatterers: self
                .scatterers
                .iter()
                .map(|s| Scatterer {
                    reflectivity: s.reflectivity * factor,
                    ..*s
                })
                .collect(),
            cysts: self.cysts.clone(),
        }
    }

    /// Lateral translation. Cyst positions move by the same arc length,
    /// which is exact for linear arrays and approximate for convex ones.
    pub fn shifted(&self, dx: f64) -> Phantom {
        Phantom {
            scatterers: self.scatterers.iter().map(|s| Scatterer { x: s.x + dx, ..*s }).collect(),
            cysts: self.cysts.iter().map(|c| Cyst { s: c.s + dx, ..*c }).collect(),
        }
    }

    /// Random tissue-like phantom: Gaussian speckle scatterers, anechoic
    /// cysts and a few bright point targets, in beam coordinates
    /// (arc-length, depth) mapped to Cartesian for convex probes.
    pub fn random<R: Rng>(config: &ProbeConfig, spec: &PhantomSpec, rng: &mut R) -> Phantom {
        let max_depth = config.max_depth();
        let z_lo = spec.min_depth_fraction * max_depth;
        let z_hi = spec.max_depth_fraction * max_depth;
        let half_span = (config.num_elements as f64 - 1.0) / 2.0 * config.pitch;
        let s_lo = config.xmit_axis(0) - 8.0 * config.pitch;
        let s_hi = config.xmit_axis(config.num_xmit - 1) + 8.0 * config.pitch;
        let s_lo = s_lo.max(-half_span);
        let s_hi = s_hi.min(half_span);

        let cysts: Vec<(f64, f64, f64)> = (0..spec.num_cysts)
            .map(|_| {
                let r = rng.gen_range(spec.cyst_radius.0..=spec.cyst_radius.1) * max_depth;
                let s = rng.gen_range(s_lo + r..=(s_hi - r).max(s_lo + r));
                let z = rng.gen_range(z_lo + r..=(z_hi - r).max(z_lo + r));
                (s, z, r)
            })
            .collect();
        let inside_cyst =
            |s: f64, z: f64| cysts.iter().any(|&(cs, cz, r)| (s - cs).powi(2) + (z - cz).powi(2) < r * r);

        let normal = rand_distr::StandardNormal;
        let mut scatterers = Vec::with_capacity(spec.num_speckle + spec.num_points);
        while scatterers.len() < spec.num_speckle {
            let s = rng.gen_range(s_lo..s_hi);
            let z = rng.gen_range(z_lo..z_hi);
            if inside_cyst(s, z) {
                continue;
            }
            let a: f64 = rng.sample(normal);
            scatterers.push(to_cartesian(config, s, z, a));
        }
        for _ in 0..spec.num_points {
            let s = rng.gen_range(s_lo..s_hi);
            let z = rng.gen_range(z_lo..z_hi);
            scatterers.push(to_cartesian(config, s, z, spec.point_strength));
        }
        Phantom {
            scatterers,
            cysts: cysts.into_iter().map(|(s, depth, radius)| Cyst { s, depth, radius }).collect(),
        }
    }
}

fn to_cartesian(config: &ProbeConfig, s: f64, depth: f64, reflectivity: f64) -> Scatterer {
    let (x, z) = config.beam_point(s, depth);
    Scatterer { x, z, reflectivity }
}

/// Parameters for [`Phantom::random`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub num_speckle: usize,
    pub num_cysts: usize,
    /// Cyst radius range as a fraction of the imaged depth.
    pub cyst_radius: (f64, f64),
    pub num_points: usize,
    pub point_strength: f64,
    pub min_depth_fraction: f64,
    pub max_depth_fraction: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            num_speckle: 1500,
            num_cysts: 2,
            cyst_radius: (0.08, 0.16),
            num_points: 3,
            point_strength: 6.0,
            min_depth_fraction: 0.05,
            max_depth_fraction: 0.95,
        }
    }
}
