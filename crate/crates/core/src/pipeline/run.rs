use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aloha::{aloha_complete, AlohaParams};
use crate::beamform::{bmode_from_cube, mla_layout, synthesize_scan_lines, BModeImage, RxSLCube, SlSource};
use crate::error::{Error, Result};
use crate::framenet::{load_checkpoint, FrameletNet};
use crate::interp_linear::{linear_interpolate, LinearParams};
use crate::metrics::{cnr, psnr, ssim, RoiSpec, SsimParams};
use crate::plane::RxXmitPlane;
use crate::sampling::{apply_mask, frame_seed, make_rx_mask, make_rx_xmit_mask, SamplingMask};
use crate::simcore::{load_cube, save_cube, simulate_rf, Cyst, Phantom, ProbeConfig, PulseSpec, RFCube};

use super::{Method, PathKind, PipelineConfig, Scheme};

/// Simulate `config.num_frames` frames of one random phantom drifting
/// laterally; the phantom is returned at the center frame's position.
pub fn simulate_sequence(config: &PipelineConfig) -> Result<(Phantom, Vec<RFCube>)> {
    config.probe.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let phantom = Phantom::random(&config.probe, &config.phantom, &mut rng);
    let pulse = PulseSpec::for_probe(&config.probe);
    let center = config.num_frames / 2;
    let frames = (0..config.num_frames)
        .map(|f| {
            let dx = (f as f64 - center as f64) * config.frame_motion;
            let mut cube = simulate_rf(&phantom.shifted(dx), &config.probe, &pulse)?;
            cube.frame_index = f;
            Ok(cube)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((phantom, frames))
}

/// Acquisition mask of one frame on the full Rx-Xmit grid.
pub(crate) fn frame_mask(config: &PipelineConfig, probe: &ProbeConfig, seed: u64) -> Result<SamplingMask> {
    let (nr, nx) = (probe.num_rx_active, probe.num_xmit);
    match config.scheme {
        Scheme::RxX4 | Scheme::RxX8 => make_rx_mask(nr, nx, config.rx_factor(), seed),
        Scheme::RxXmit4x2 => make_rx_xmit_mask(nr, nx, config.rx_factor(), config.scheme.xmit_factor(), seed),
    }
}

/// Data in the domain where interpolation runs: Rx-Xmit for the first path
/// (held as a one-line-per-transmit cube) and expanded Rx-SL for the second.
#[derive(Debug, Clone)]
pub(crate) struct Working {
    pub cube: RxSLCube,
    pub mask: SamplingMask,
}

impl Working {
    pub fn masked_plane(&self, depth: usize) -> Result<RxXmitPlane> {
        apply_mask(&self.cube.plane(depth), &self.mask)
    }
}

fn as_line_cube(cube: &RFCube) -> Result<RxSLCube> {
    let (nd, nr, _) = cube.dims();
    RxSLCube::new(cube.data().to_vec(), nd, nr, 1, mla_layout(cube.config(), 1)?)
}

/// Move one acquired frame and its mask into the interpolation domain.
pub(crate) fn to_working(config: &PipelineConfig, cube: &RFCube, mask: &SamplingMask) -> Result<Working> {
    match config.path() {
        PathKind::RxXmitThenMla => Ok(Working {
            cube: as_line_cube(cube)?,
            mask: mask.clone(),
        }),
        PathKind::MlaThenRxSl => {
            let xf = config.scheme.xmit_factor();
            let lines = synthesize_scan_lines(&cube.decimate_xmit(xf)?, config.sl_expansion())?;
            let columns: Vec<usize> = lines.provenance().iter().map(|s| s.xmit * xf).collect();
            Ok(Working {
                mask: mask.select_columns(&columns),
                cube: lines,
            })
        }
    }
}

/// Fully sampled counterpart of [`to_working`]: what the interpolator
/// should produce for `cube`.
pub(crate) fn working_target(config: &PipelineConfig, cube: &RFCube) -> Result<RxSLCube> {
    match config.path() {
        PathKind::RxXmitThenMla => as_line_cube(cube),
        PathKind::MlaThenRxSl => synthesize_scan_lines(cube, config.mla_factor),
    }
}

/// Scan-line cube handed to the beamformer once every working plane is filled.
fn to_scan_lines(config: &PipelineConfig, probe: &ProbeConfig, filled: RxSLCube) -> Result<RxSLCube> {
    match config.path() {
        PathKind::RxXmitThenMla => {
            let cube = RFCube::from_data(probe.clone(), filled.data().to_vec(), 0)?;
            synthesize_scan_lines(&cube, config.mla_factor)
        }
        PathKind::MlaThenRxSl => {
            if matches!(config.method, Method::Cnn { .. }) && config.scheme.xmit_factor() > 1 {
                // The network is trained against the full-grid line layout.
                filled.with_provenance(mla_layout(probe, config.mla_factor)?, config.mla_factor)
            } else {
                Ok(filled)
            }
        }
    }
}

/// A ready-to-run interpolation method.
pub enum Interpolator {
    ZeroFill,
    Linear(LinearParams),
    Aloha(AlohaParams),
    Cnn(Box<FrameletNet<f32>>),
}

impl Interpolator {
    /// Loads the network checkpoint for the cnn method.
    pub fn from_config(config: &PipelineConfig) -> Result<Self> {
        Ok(match &config.method {
            Method::ZeroFill => Interpolator::ZeroFill,
            Method::Linear => Interpolator::Linear(config.linear.clone()),
            Method::Aloha => Interpolator::Aloha(config.aloha.clone()),
            Method::Cnn { checkpoint } => Interpolator::Cnn(Box::new(load_checkpoint(checkpoint)?)),
        })
    }

    /// Fill the center frame of every stack. `stacks[d]` holds the masked
    /// planes of all frames at one depth, `center` indexes the output frame.
    pub fn fill(&self, stacks: &[Vec<(RxXmitPlane, SamplingMask)>], center: usize) -> Result<Vec<RxXmitPlane>> {
        match self {
            Interpolator::ZeroFill => Ok(stacks.iter().map(|s| s[center].0.zero_filled()).collect()),
            Interpolator::Linear(p) => stacks
                .iter()
                .map(|s| Ok(linear_interpolate(s, p)?.swap_remove(center)))
                .collect(),
            Interpolator::Aloha(p) => stacks
                .iter()
                .map(|s| Ok(aloha_complete(s, p)?.0.swap_remove(center)))
                .collect(),
            Interpolator::Cnn(net) => {
                let planes: Vec<RxXmitPlane> = stacks.iter().map(|s| s[center].0.clone()).collect();
                net.interpolate(&planes)
            }
        }
    }
}

/// Interpolator input planes for every depth of `working`, center frame only
/// unless the method uses temporal context.
pub(crate) fn build_planes(working: &[Working]) -> Result<Vec<Vec<(RxXmitPlane, SamplingMask)>>> {
    let Some(first) = working.first() else {
        return Ok(Vec::new());
    };
    (0..first.cube.depth())
        .map(|d| working.iter().map(|w| Ok((w.masked_plane(d)?, w.mask.clone()))).collect())
        .collect()
}

/// One row of the quality report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub frame: usize,
    pub scheme: Scheme,
    pub method: String,
    pub path: PathKind,
    /// Missing when the phantom has no usable cyst in view.
    pub cnr: Option<f64>,
    pub cnr_reference: Option<f64>,
    pub psnr_db: f64,
    pub ssim: f64,
    pub ms_per_plane: f64,
    pub planes: usize,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str = "frame,scheme,method,path,cnr,cnr_reference,psnr_db,ssim,ms_per_plane";

    pub fn csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        format!(
            "{},{},{},{},{},{},{:.6},{:.6},{:.4}",
            self.frame,
            self.scheme,
            self.method,
            match self.path {
                PathKind::RxXmitThenMla => "rx_xmit_then_mla",
                PathKind::MlaThenRxSl => "mla_then_rx_sl",
            },
            opt(self.cnr),
            opt(self.cnr_reference),
            self.psnr_db,
            self.ssim,
            self.ms_per_plane
        )
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub image: BModeImage,
    pub reference: BModeImage,
    pub metrics: MetricsRow,
    /// Beamformer input after interpolation.
    pub scan_lines: RxSLCube,
    /// Center-frame mask on the Rx-Xmit grid.
    pub mask: SamplingMask,
    pub phantom: Phantom,
}

/// Anechoic pixels inside 0.8 radius of any cyst, background pixels in a
/// ring between 1.3 and 1.8 radii that touches no cyst. `None` when
/// either set is empty.
pub fn roi_for_image(probe: &ProbeConfig, lines: &[SlSource], rows: usize, cysts: &[Cyst]) -> Option<RoiSpec> {
    let mut anechoic = Vec::new();
    let mut background = Vec::new();
    for (col, line) in lines.iter().enumerate() {
        let s = line.position();
        for row in 0..rows {
            let z = probe.sample_depth(row as f64);
            let rel: Vec<f64> = cysts
                .iter()
                .map(|c| ((s - c.s).powi(2) + (z - c.depth).powi(2)).sqrt() / c.radius)
                .collect();
            if rel.iter().any(|&d| d < 0.8) {
                anechoic.push((row, col));
            } else if rel.iter().all(|&d| d > 1.3) && rel.iter().any(|&d| d < 1.8) {
                background.push((row, col));
            }
        }
    }
    RoiSpec::new(background, anechoic).ok()
}

/// Simulate, mask, interpolate, expand, beamform and score one frame.
/// Intermediates go to `config.out_dir` when set.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutput> {
    config.validate()?;
    let interpolator = Interpolator::from_config(config)?;
    let (phantom, frames) = simulate_sequence(config)?;
    run_on_frames(config, &interpolator, phantom, &frames)
}

/// Per-frame acquisition masks, seeded from `config.mask_seed` and each
/// frame's index.
pub fn masks_for(config: &PipelineConfig, frames: &[RFCube]) -> Result<Vec<SamplingMask>> {
    frames
        .iter()
        .map(|f| frame_mask(config, f.config(), frame_seed(config.mask_seed, f.frame_index)))
        .collect()
}

/// Center frame after interpolation.
#[derive(Debug, Clone)]
pub struct Interpolated {
    /// Filled planes in the interpolation domain.
    pub working: RxSLCube,
    /// Beamformer input.
    pub scan_lines: RxSLCube,
    pub elapsed_ms: f64,
    pub planes: usize,
}

/// Mask, interpolate and expand the center frame of `frames`, using the
/// other frames as temporal context.
pub fn interpolate_frames(
    config: &PipelineConfig,
    interpolator: &Interpolator,
    frames: &[RFCube],
    masks: &[SamplingMask],
) -> Result<Interpolated> {
    check_nonempty(frames, "frame list")?;
    if masks.len() != frames.len() {
        return Err(Error::shape(format!("{} masks", frames.len()), format!("{} masks", masks.len())));
    }
    let center = frames.len() / 2;
    let probe = frames[center].config().clone();
    let working = frames
        .iter()
        .zip(masks)
        .map(|(f, m)| to_working(config, f, m))
        .collect::<Result<Vec<_>>>()?;
    let stacks = build_planes(&working)?;
    let start = Instant::now();
    let filled = interpolator.fill(&stacks, center)?;
    let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    let mut cube = working[center].cube.clone();
    for (d, plane) in filled.iter().enumerate() {
        cube.set_plane(d, plane)?;
    }
    Ok(Interpolated {
        scan_lines: to_scan_lines(config, &probe, cube.clone())?,
        working: cube,
        elapsed_ms,
        planes: filled.len(),
    })
}

/// [`run_pipeline`] on frames that are already simulated.
pub(crate) fn run_on_frames(
    config: &PipelineConfig,
    interpolator: &Interpolator,
    phantom: Phantom,
    frames: &[RFCube],
) -> Result<PipelineOutput> {
    let center = frames.len() / 2;
    let probe = frames[center].config().clone();
    let masks = masks_for(config, frames)?;
    let Interpolated {
        working: interpolated,
        scan_lines,
        elapsed_ms,
        planes,
    } = interpolate_frames(config, interpolator, frames, &masks)?;
    let image = bmode_from_cube(&scan_lines, &probe, config.dynamic_range)?;
    let reference_lines = synthesize_scan_lines(&frames[center], config.mla_factor)?;
    let reference = bmode_from_cube(&reference_lines, &probe, config.dynamic_range)?;

    let gray = image.gray_levels();
    let gray_ref = reference.gray_levels();
    let roi = roi_for_image(&probe, reference_lines.provenance(), probe.depth_samples, &phantom.cysts);
    let metrics = MetricsRow {
        frame: frames[center].frame_index,
        scheme: config.scheme,
        method: config.method.name().to_string(),
        path: config.path(),
        cnr: roi.as_ref().map(|r| cnr(&image.pixels, r)).transpose()?,
        cnr_reference: roi.as_ref().map(|r| cnr(&reference.pixels, r)).transpose()?,
        psnr_db: psnr(&gray_ref, &gray, 255.0)?,
        ssim: ssim(&gray_ref, &gray, &SsimParams::default())?,
        ms_per_plane: elapsed_ms / planes.max(1) as f64,
        planes,
    };

    if let Some(dir) = &config.out_dir {
        persist(dir, config, &frames[center], &masks[center], &interpolated, &image, &reference, &metrics)?;
    }
    Ok(PipelineOutput {
        image,
        reference,
        metrics,
        scan_lines,
        mask: masks[center].clone(),
        phantom,
    })
}

/// Line layout file stored next to a line cube.
pub fn lines_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("lines.json")
}

#[derive(Serialize, Deserialize)]
struct LineLayout {
    mla_factor: usize,
    lines: Vec<SlSource>,
}

/// Write a line cube as RFC1 (lines in the transmit slot, probe config in
/// the usual sidecar) plus its line layout as JSON.
pub fn save_line_cube(cube: &RxSLCube, probe: &ProbeConfig, path: &Path) -> Result<()> {
    let config = ProbeConfig {
        num_xmit: cube.num_sl(),
        ..probe.clone()
    };
    save_cube(&RFCube::from_data(config, cube.data().to_vec(), 0)?, path)?;
    let layout = LineLayout {
        mla_factor: cube.mla_factor(),
        lines: cube.provenance().to_vec(),
    };
    fs::write(lines_path(path), serde_json::to_vec_pretty(&layout)?)?;
    Ok(())
}

/// Inverse of [`save_line_cube`]; the returned probe config carries the
/// line count in `num_xmit`.
pub fn load_line_cube(path: &Path) -> Result<(RxSLCube, ProbeConfig)> {
    let cube = load_cube(path)?;
    let layout_path = lines_path(path);
    let text = fs::read(&layout_path).map_err(|e| Error::MissingInput {
        path: layout_path,
        reason: e.to_string(),
    })?;
    let layout: LineLayout = serde_json::from_slice(&text)?;
    let (nd, nr, _) = cube.dims();
    let lines = RxSLCube::new(cube.data().to_vec(), nd, nr, layout.mla_factor, layout.lines)?;
    Ok((lines, cube.config().clone()))
}

#[allow(clippy::too_many_arguments)]
fn persist(
    dir: &Path,
    config: &PipelineConfig,
    full: &RFCube,
    mask: &SamplingMask,
    interpolated: &RxSLCube,
    image: &BModeImage,
    reference: &BModeImage,
    metrics: &MetricsRow,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("pipeline.json"), serde_json::to_vec_pretty(config)?)?;
    save_cube(full, &dir.join("reference.rfc"))?;
    mask.write(std::io::BufWriter::new(fs::File::create(dir.join("mask.msk"))?))?;
    save_line_cube(interpolated, full.config(), &dir.join("interpolated.rfc"))?;
    image.write_pgm(&dir.join("bmode.pgm"))?;
    reference.write_pgm(&dir.join("reference_bmode.pgm"))?;
    let mut csv = String::from(MetricsRow::CSV_HEADER);
    csv.push('\n');
    csv.push_str(&metrics.csv_line());
    csv.push('\n');
    fs::write(dir.join("metrics.csv"), csv)?;
    fs::write(dir.join("metrics.json"), serde_json::to_vec_pretty(metrics)?)?;
    Ok(())
}

pub(crate) fn check_nonempty<T>(items: &[T], what: &str) -> Result<()> {
    if items.is_empty() {
        Err(Error::config(format!("{what} must not be empty")))
    } else {
        Ok(())
    }
}
