//! C ABI over `rfinterp`.
//!
//! Every fallible call returns an [`RfStatus`]; on failure the message is
//! kept per thread and read back with [`rf_last_error_message`]. Objects
//! cross the boundary as opaque handles created by `rf_*_new`/`rf_*_load`
//! style calls and released by the matching `rf_*_free`. Panics never
//! unwind into the caller; they surface as `RF_STATUS_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rfinterp::beamform::{bmode_from_cube, synthesize_scan_lines, BModeImage};
use rfinterp::metrics::{psnr, ssim, SsimParams};
use rfinterp::pipeline::{run_pipeline, Interpolator, Method, PipelineConfig};
use rfinterp::sampling::{make_rx_mask, make_rx_xmit_mask, MaskKind, SamplingMask};
use rfinterp::simcore::{load_cube, save_cube, simulate_rf, Phantom, PhantomSpec, ProbeConfig, PulseSpec, RFCube};
use rfinterp::{Error, RxXmitPlane};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RfStatus {
    Ok = 0,
    /// A required pointer was null.
    NullArgument = 1,
    /// Invalid configuration or argument value.
    InvalidConfig = 2,
    /// Dimensions do not match.
    Shape = 3,
    /// A referenced file does not exist or cannot be opened.
    MissingInput = 4,
    Io = 5,
    /// Malformed file or JSON.
    Parse = 6,
    Numerical = 7,
    /// Internal panic caught at the boundary.
    Panic = 8,
    Other = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RfProbeKind {
    Linear = 0,
    Convex = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RfScheme {
    RxX4 = 0,
    RxX8 = 1,
    RxXmit4x2 = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RfMethod {
    ZeroFill = 0,
    Linear = 1,
    Aloha = 2,
    Cnn = 3,
}

/// Probe geometry.
pub struct RfProbe(ProbeConfig);
/// RF frame `[depth x rx x xmit]`.
pub struct RfCube(RFCube);
/// Sampling mask over the Rx-Xmit grid.
pub struct RfMask(SamplingMask);
/// Interpolation method with any loaded weights.
pub struct RfInterpolator(Interpolator);
/// Log-compressed B-mode image.
pub struct RfImage(BModeImage);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> RfStatus {
    match e {
        Error::InvalidConfig(_) | Error::OutOfRange { .. } | Error::NoMeasurements(_) => RfStatus::InvalidConfig,
        Error::Shape { .. } => RfStatus::Shape,
        Error::Parse { .. } | Error::Truncated { .. } | Error::Json(_) => RfStatus::Parse,
        Error::MissingInput { .. } => RfStatus::MissingInput,
        Error::Io(_) => RfStatus::Io,
        Error::Numerical(_) | Error::Diverged { .. } => RfStatus::Numerical,
        #[allow(unreachable_patterns)]
        _ => RfStatus::Other,
    }
}

struct Fail(RfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(RfStatus::NullArgument, format!("{what} is null"))
}

/// Run `f`, record any failure, and turn panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            RfStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            RfStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(RfStatus::InvalidConfig, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes, so a
/// caller can retry with a bigger buffer. Passing a null `buf` only queries
/// the length.
#[no_mangle]
pub unsafe extern "C" fn rf_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Built-in probe.
#[no_mangle]
pub unsafe extern "C" fn rf_probe_new(kind: RfProbeKind, out: *mut *mut RfProbe) -> RfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let cfg = match kind {
            RfProbeKind::Linear => ProbeConfig::default(),
            RfProbeKind::Convex => ProbeConfig::convex(),
        };
        *out = boxed(RfProbe(cfg));
        Ok(())
    })
}

/// Probe from a JSON object; missing fields take the linear defaults.
#[no_mangle]
pub unsafe extern "C" fn rf_probe_from_json(json: *const c_char, out: *mut *mut RfProbe) -> RfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let cfg: ProbeConfig = serde_json::from_str(str_arg(json, "json")?).map_err(Error::from)?;
        cfg.validate()?;
        *out = boxed(RfProbe(cfg));
        Ok(())
    })
}

/// Change the number of depth samples per trace.
#[no_mangle]
pub unsafe extern "C" fn rf_probe_set_depth_samples(probe: *mut RfProbe, depth_samples: usize) -> RfStatus {
    guard(|| {
        let probe = out_ptr(probe, "probe")?;
        let cfg = ProbeConfig {
            depth_samples,
            ..probe.0.clone()
        };
        cfg.validate()?;
        probe.0 = cfg;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rf_probe_free(probe: *mut RfProbe) {
    free(probe)
}

/// Simulate one frame of the random phantom drawn from `seed`.
#[no_mangle]
pub unsafe extern "C" fn rf_simulate(probe: *const RfProbe, seed: u64, out: *mut *mut RfCube) -> RfStatus {
    guard(|| {
        let probe = &borrow(probe, "probe")?.0;
        let out = out_ptr(out, "out")?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phantom = Phantom::random(probe, &PhantomSpec::default(), &mut rng);
        *out = boxed(RfCube(simulate_rf(&phantom, probe, &PulseSpec::for_probe(probe))?));
        Ok(())
    })
}

/// First frame of an RFC1 file (with its `.json` sidecar when present).
#[no_mangle]
pub unsafe extern "C" fn rf_cube_load(path: *const c_char, out: *mut *mut RfCube) -> RfStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        let out = out_ptr(out, "out")?;
        *out = boxed(RfCube(load_cube(&path)?));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rf_cube_save(cube: *const RfCube, path: *const c_char) -> RfStatus {
    guard(|| {
        let cube = &borrow(cube, "cube")?.0;
        save_cube(cube, &PathBuf::from(str_arg(path, "path")?))?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rf_cube_dims(
    cube: *const RfCube,
    depth: *mut usize,
    num_rx: *mut usize,
    num_xmit: *mut usize,
) -> RfStatus {
    guard(|| {
        let (d, r, x) = borrow(cube, "cube")?.0.dims();
        *out_ptr(depth, "depth")? = d;
        *out_ptr(num_rx, "num_rx")? = r;
        *out_ptr(num_xmit, "num_xmit")? = x;
        Ok(())
    })
}

/// Samples in `[depth, rx, xmit]` order, depth fastest; valid until the
/// cube is freed. Null for a null cube.
#[no_mangle]
pub unsafe extern "C" fn rf_cube_data(cube: *const RfCube) -> *const f32 {
    cube.as_ref().map_or(ptr::null(), |c| c.0.data().as_ptr())
}

#[no_mangle]
pub unsafe extern "C" fn rf_cube_free(cube: *mut RfCube) {
    free(cube)
}

/// Random sampling mask for `scheme` on a `num_rx x num_xmit` grid.
#[no_mangle]
pub unsafe extern "C" fn rf_mask_new(
    scheme: RfScheme,
    num_rx: usize,
    num_xmit: usize,
    seed: u64,
    out: *mut *mut RfMask,
) -> RfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let mask = match scheme {
            RfScheme::RxX4 => make_rx_mask(num_rx, num_xmit, 4, seed)?,
            RfScheme::RxX8 => make_rx_mask(num_rx, num_xmit, 8, seed)?,
            RfScheme::RxXmit4x2 => make_rx_xmit_mask(num_rx, num_xmit, 4, 2, seed)?,
        };
        *out = boxed(RfMask(mask));
        Ok(())
    })
}

/// Mask from a row-major `num_rx x num_xmit` byte array, nonzero = kept.
#[no_mangle]
pub unsafe extern "C" fn rf_mask_from_bytes(
    keep: *const u8,
    num_rx: usize,
    num_xmit: usize,
    out: *mut *mut RfMask,
) -> RfStatus {
    guard(|| {
        let keep = slice_arg(keep, num_rx * num_xmit, "keep")?;
        let out = out_ptr(out, "out")?;
        let m = DMatrix::from_fn(num_rx, num_xmit, |r, c| keep[r * num_xmit + c] != 0);
        *out = boxed(RfMask(SamplingMask::from_keep(MaskKind::RxRandom, m, 1, 1, 0)));
        Ok(())
    })
}

/// Number of kept samples, or 0 for a null mask.
#[no_mangle]
pub unsafe extern "C" fn rf_mask_kept_count(mask: *const RfMask) -> usize {
    mask.as_ref().map_or(0, |m| m.0.kept_count())
}

/// Row-major kept flags into `keep` (`num_rx * num_xmit` bytes).
#[no_mangle]
pub unsafe extern "C" fn rf_mask_to_bytes(mask: *const RfMask, keep: *mut u8, len: usize) -> RfStatus {
    guard(|| {
        let mask = &borrow(mask, "mask")?.0;
        let (nr, nx) = mask.shape();
        if len != nr * nx {
            return Err(Error::shape((nr * nx).to_string(), len.to_string()).into());
        }
        let keep = slice_out(keep, len, "keep")?;
        for r in 0..nr {
            for c in 0..nx {
                keep[r * nx + c] = u8::from(mask.is_kept(r, c));
            }
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rf_mask_free(mask: *mut RfMask) {
    free(mask)
}

/// Interpolator for `method`; `checkpoint` names the weights file for
/// `RF_METHOD_CNN` and is ignored (may be null) otherwise.
#[no_mangle]
pub unsafe extern "C" fn rf_interpolator_new(
    method: RfMethod,
    checkpoint: *const c_char,
    out: *mut *mut RfInterpolator,
) -> RfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let method = match method {
            RfMethod::ZeroFill => Method::ZeroFill,
            RfMethod::Linear => Method::Linear,
            RfMethod::Aloha => Method::Aloha,
            RfMethod::Cnn => Method::Cnn {
                checkpoint: PathBuf::from(str_arg(checkpoint, "checkpoint")?),
            },
        };
        let cfg = PipelineConfig {
            method,
            ..PipelineConfig::default()
        };
        *out = boxed(RfInterpolator(Interpolator::from_config(&cfg)?));
        Ok(())
    })
}

/// Fill one row-major `n1 x n2` plane in place. Samples whose `keep` byte
/// is zero are treated as missing; kept samples are left unchanged.
#[no_mangle]
pub unsafe extern "C" fn rf_interpolate_plane(
    interp: *const RfInterpolator,
    values: *mut f64,
    keep: *const u8,
    n1: usize,
    n2: usize,
) -> RfStatus {
    guard(|| {
        let interp = &borrow(interp, "interpolator")?.0;
        let n = n1 * n2;
        let keep = slice_arg(keep, n, "keep")?;
        let values = slice_out(values, n, "values")?;
        let v = DMatrix::from_fn(n1, n2, |r, c| values[r * n2 + c]);
        let k = DMatrix::from_fn(n1, n2, |r, c| keep[r * n2 + c] != 0);
        let mask = SamplingMask::from_keep(MaskKind::RxRandom, k.clone(), 1, 1, 0);
        let plane = RxXmitPlane::with_missing(v, k.map(|x| !x))?;
        let filled = interp.fill(&[vec![(plane, mask)]], 0)?;
        for r in 0..n1 {
            for c in 0..n2 {
                values[r * n2 + c] = filled[0].values()[(r, c)];
            }
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rf_interpolator_free(interp: *mut RfInterpolator) {
    free(interp)
}

/// Expand `cube` to `mla_factor` lines per transmit, beamform and
/// log-compress to `dynamic_range_db`.
#[no_mangle]
pub unsafe extern "C" fn rf_beamform(
    cube: *const RfCube,
    mla_factor: usize,
    dynamic_range_db: f64,
    out: *mut *mut RfImage,
) -> RfStatus {
    guard(|| {
        let cube = &borrow(cube, "cube")?.0;
        let out = out_ptr(out, "out")?;
        let lines = synthesize_scan_lines(cube, mla_factor)?;
        *out = boxed(RfImage(bmode_from_cube(&lines, cube.config(), dynamic_range_db)?));
        Ok(())
    })
}

/// Full pipeline from a JSON pipeline configuration (fields as in the CLI's
/// `--config` file). Returns the B-mode image and its PSNR and SSIM against
/// the fully sampled reference; either score pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn rf_run_pipeline(
    config_json: *const c_char,
    image: *mut *mut RfImage,
    psnr_db: *mut f64,
    ssim_out: *mut f64,
) -> RfStatus {
    guard(|| {
        let cfg: PipelineConfig = serde_json::from_str(str_arg(config_json, "config_json")?).map_err(Error::from)?;
        let image = out_ptr(image, "image")?;
        let out = run_pipeline(&cfg)?;
        if let Some(p) = psnr_db.as_mut() {
            *p = out.metrics.psnr_db;
        }
        if let Some(s) = ssim_out.as_mut() {
            *s = out.metrics.ssim;
        }
        *image = boxed(RfImage(out.image));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rf_image_dims(image: *const RfImage, rows: *mut usize, cols: *mut usize) -> RfStatus {
    guard(|| {
        let (r, c) = borrow(image, "image")?.0.pixels.shape();
        *out_ptr(rows, "rows")? = r;
        *out_ptr(cols, "cols")? = c;
        Ok(())
    })
}

/// Pixels in dB, row-major, into `buf` of exactly `rows * cols` values.
#[no_mangle]
pub unsafe extern "C" fn rf_image_pixels(image: *const RfImage, buf: *mut f64, len: usize) -> RfStatus {
    guard(|| {
        let px = &borrow(image, "image")?.0.pixels;
        let (rows, cols) = px.shape();
        if len != rows * cols {
            return Err(Error::shape((rows * cols).to_string(), len.to_string()).into());
        }
        let buf = slice_out(buf, len, "buf")?;
        for r in 0..rows {
            for c in 0..cols {
                buf[r * cols + c] = px[(r, c)];
            }
        }
        Ok(())
    })
}

/// Binary PGM plus a `.json` sidecar.
#[no_mangle]
pub unsafe extern "C" fn rf_image_write_pgm(image: *const RfImage, path: *const c_char) -> RfStatus {
    guard(|| {
        let image = &borrow(image, "image")?.0;
        image.write_pgm(&PathBuf::from(str_arg(path, "path")?))?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rf_image_free(image: *mut RfImage) {
    free(image)
}

fn matrix(p: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |r, c| p[r * cols + c])
}

/// PSNR in dB of two row-major images with peak value `r_max`.
#[no_mangle]
pub unsafe extern "C" fn rf_psnr(
    reference: *const f64,
    test: *const f64,
    rows: usize,
    cols: usize,
    r_max: f64,
    out: *mut f64,
) -> RfStatus {
    guard(|| {
        let a = slice_arg(reference, rows * cols, "reference")?;
        let b = slice_arg(test, rows * cols, "test")?;
        let out = out_ptr(out, "out")?;
        *out = psnr(&matrix(a, rows, cols), &matrix(b, rows, cols), r_max)?;
        Ok(())
    })
}

/// SSIM with the default constants (8-bit peak, disk window of radius 50).
#[no_mangle]
pub unsafe extern "C" fn rf_ssim(a: *const f64, b: *const f64, rows: usize, cols: usize, out: *mut f64) -> RfStatus {
    guard(|| {
        let a = slice_arg(a, rows * cols, "a")?;
        let b = slice_arg(b, rows * cols, "b")?;
        let out = out_ptr(out, "out")?;
        *out = ssim(&matrix(a, rows, cols), &matrix(b, rows, cols), &SsimParams::default())?;
        Ok(())
    })
}
