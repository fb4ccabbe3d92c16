//! End-to-end orchestration: simulate, mask, interpolate, expand scan
//! lines, beamform, score; plus dataset generation, training and the
//! method-by-scheme benchmark.

mod bench;
mod dataset;
mod run;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aloha::AlohaParams;
use crate::beamform::DEFAULT_DYNAMIC_RANGE_DB;
use crate::error::{Error, Result};
use crate::interp_linear::LinearParams;
use crate::simcore::{PhantomSpec, ProbeConfig};

pub use bench::{benchmark, BenchmarkRow, BenchmarkSpec, BenchmarkTable, METHOD_ORDER};
pub use dataset::{
    load_dataset, make_dataset, make_manifest, train_on_dataset, Dataset, DatasetSpec, Manifest, ManifestEntry, Split,
};
pub use run::{
    interpolate_frames, lines_path, load_line_cube, masks_for, roi_for_image, run_pipeline, save_line_cube,
    simulate_sequence, Interpolated, Interpolator, MetricsRow, PipelineOutput,
};

/// Sub-sampling scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Scheme {
    /// Keep a random quarter of the receive channels.
    RxX4,
    /// Keep a random eighth of the receive channels.
    RxX8,
    /// Every other transmit event, a random quarter of the channels each.
    #[serde(rename = "rx_xmit_4x2")]
    #[value(name = "rx_xmit_4x2")]
    RxXmit4x2,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::RxX4, Scheme::RxX8, Scheme::RxXmit4x2];

    pub fn rx_factor(self) -> usize {
        match self {
            Scheme::RxX4 | Scheme::RxXmit4x2 => 4,
            Scheme::RxX8 => 8,
        }
    }

    pub fn xmit_factor(self) -> usize {
        match self {
            Scheme::RxXmit4x2 => 2,
            _ => 1,
        }
    }

    /// Overall reduction of the recorded samples.
    pub fn ratio(self) -> usize {
        self.rx_factor() * self.xmit_factor()
    }

    pub fn default_path(self) -> PathKind {
        match self {
            Scheme::RxXmit4x2 => PathKind::MlaThenRxSl,
            _ => PathKind::RxXmitThenMla,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::RxX4 => "rx_x4",
            Scheme::RxX8 => "rx_x8",
            Scheme::RxXmit4x2 => "rx_xmit_4x2",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::config(format!("unknown scheme {s}")))
    }
}

/// Order of interpolation and scan-line expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum PathKind {
    /// Interpolate Rx-Xmit planes, then expand to scan lines.
    RxXmitThenMla,
    /// Expand to scan lines first, then interpolate Rx-SL planes.
    MlaThenRxSl,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Method {
    ZeroFill,
    Linear,
    Aloha,
    Cnn { checkpoint: PathBuf },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::ZeroFill => "zero_fill",
            Method::Linear => "linear",
            Method::Aloha => "aloha",
            Method::Cnn { .. } => "cnn",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub scheme: Scheme,
    /// `None` picks the scheme's default order.
    pub path: Option<PathKind>,
    pub method: Method,
    pub probe: ProbeConfig,
    pub phantom: PhantomSpec,
    /// Seed of the phantom.
    pub seed: u64,
    /// Base seed of the per-frame masks.
    pub mask_seed: u64,
    /// Frames simulated around the output frame (temporal context for the
    /// linear and low-rank methods).
    pub num_frames: usize,
    /// Lateral phantom motion between frames (m).
    pub frame_motion: f64,
    /// Scan lines per transmit event of the fully sampled acquisition.
    pub mla_factor: usize,
    pub dynamic_range: f64,
    /// Replace the scheme's receive factor, e.g. 1 for a no-op mask.
    pub rx_factor_override: Option<usize>,
    pub aloha: AlohaParams,
    pub linear: LinearParams,
    /// Where intermediates are written; nothing is written when `None`.
    pub out_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            scheme: Scheme::RxX4,
            path: None,
            method: Method::ZeroFill,
            probe: ProbeConfig::default(),
            phantom: PhantomSpec::default(),
            seed: 0,
            mask_seed: 1,
            num_frames: 1,
            frame_motion: 0.05e-3,
            mla_factor: 4,
            dynamic_range: DEFAULT_DYNAMIC_RANGE_DB,
            rx_factor_override: None,
            aloha: AlohaParams {
                rank: crate::aloha::RankChoice::Auto(PIPELINE_ALOHA_RANK_TOL),
                ..AlohaParams::default()
            },
            linear: LinearParams::default(),
            out_dir: None,
        }
    }
}

/// Relative singular-value cutoff for the low-rank rank estimate on RF
/// planes, where the exact-arithmetic cutoff keeps nearly every component.
pub const PIPELINE_ALOHA_RANK_TOL: f64 = 0.05;

impl PipelineConfig {
    pub fn path(&self) -> PathKind {
        self.path.unwrap_or(self.scheme.default_path())
    }

    pub fn rx_factor(&self) -> usize {
        self.rx_factor_override.unwrap_or(self.scheme.rx_factor())
    }

    /// Scan lines per surviving transmit in the Rx-SL path.
    pub fn sl_expansion(&self) -> usize {
        self.mla_factor * self.scheme.xmit_factor()
    }

    /// Checks everything that can be checked before any computation,
    /// including that a network checkpoint exists.
    pub fn validate(&self) -> Result<()> {
        self.probe.validate()?;
        if self.scheme == Scheme::RxXmit4x2 && self.path() == PathKind::RxXmitThenMla {
            return Err(Error::config(
                "rx_xmit_4x2 requires the mla_then_rx_sl path (expand scan lines before interpolating)",
            ));
        }
        crate::beamform::check_mla_factor(self.mla_factor)?;
        if self.path() == PathKind::MlaThenRxSl {
            crate::beamform::check_mla_factor(self.sl_expansion())?;
        }
        if self.probe.num_xmit % self.scheme.xmit_factor() != 0 {
            return Err(Error::config("transmit factor must divide the transmit count"));
        }
        let f = self.rx_factor();
        if !matches!(f, 1 | 2 | 4 | 8) || f > self.probe.num_rx_active {
            return Err(Error::config(format!("receive factor {f} unsupported")));
        }
        if self.num_frames == 0 {
            return Err(Error::config("at least one frame is required"));
        }
        if !(self.dynamic_range > 0.0) {
            return Err(Error::config("dynamic range must be positive"));
        }
        self.linear.validate()?;
        if let Method::Cnn { checkpoint } = &self.method {
            if !checkpoint.is_file() {
                return Err(Error::MissingInput {
                    path: checkpoint.clone(),
                    reason: "network checkpoint not found".into(),
                });
            }
        }
        Ok(())
    }
}
