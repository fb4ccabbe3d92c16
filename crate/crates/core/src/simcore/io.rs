//! RFC1 cube files: `"RFC1"`, four little-endian u32 `{depth, rx, xmit,
//! frame_count}`, then f32 little-endian samples with depth fastest, then
//! rx, then xmit, then frame. The probe configuration travels in a JSON
//! sidecar next to the cube (`<name>.json`).

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::config::ProbeConfig;
use super::simulate::RFCube;

pub const RFC1_MAGIC: &[u8; 4] = b"RFC1";
const HEADER_LEN: usize = 4 + 4 * 4;
/// Refuse headers describing more than 4 GiB of samples.
const MAX_PAYLOAD: u64 = 1 << 32;

/// Serialize frames that share one geometry.
pub fn write_cube<W: Write>(mut w: W, frames: &[RFCube]) -> Result<()> {
    let first = frames
        .first()
        .ok_or_else(|| Error::config("nothing to write: no frames"))?;
    let (nd, nr, nx) = first.dims();
    if let Some(bad) = frames.iter().find(|f| f.dims() != (nd, nr, nx)) {
        return Err(Error::shape(format!("{:?}", (nd, nr, nx)), format!("{:?}", bad.dims())));
    }
    let mut buf = Vec::with_capacity(HEADER_LEN + frames.len() * first.data().len() * 4);
    buf.extend_from_slice(RFC1_MAGIC);
    for v in [nd, nr, nx, frames.len()] {
        let v = u32::try_from(v).map_err(|_| Error::config("dimension exceeds u32"))?;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for f in frames {
        for &v in f.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Parse RFC1 bytes. Dimensions come from the header; the remaining probe
/// fields from `config` (defaults when `None`).
pub fn read_cube<R: Read>(mut r: R, config: Option<&ProbeConfig>) -> Result<Vec<RFCube>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 4 || &bytes[..4] != RFC1_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad magic {:?}, expected \"RFC1\"", &bytes[..bytes.len().min(4)]),
        });
    }
    let mut dims = [0usize; 4];
    for (i, d) in dims.iter_mut().enumerate() {
        let off = 4 + 4 * i;
        let raw = bytes.get(off..off + 4).ok_or_else(|| Error::Parse {
            offset: off,
            message: "header ends inside the dimension fields".into(),
        })?;
        *d = u32::from_le_bytes(raw.try_into().expect("4 bytes")) as usize;
        if *d == 0 {
            let name = ["depth", "rx", "xmit", "frame_count"][i];
            return Err(Error::Parse {
                offset: off,
                message: format!("{name} must be positive"),
            });
        }
    }
    let [nd, nr, nx, nf] = dims;
    let samples = (nd as u64) * (nr as u64) * (nx as u64) * (nf as u64);
    if samples * 4 > MAX_PAYLOAD {
        return Err(Error::Parse {
            offset: 4,
            message: format!("header declares {samples} samples, over the size limit"),
        });
    }
    let expected = samples as usize * 4;
    let actual = bytes.len() - HEADER_LEN;
    if actual != expected {
        return Err(Error::Truncated { expected, actual });
    }

    let mut cfg = config.cloned().unwrap_or_default();
    if config.is_some() && (cfg.depth_samples, cfg.num_rx_active, cfg.num_xmit) != (nd, nr, nx) {
        return Err(Error::shape(
            format!("{:?} (sidecar)", (cfg.depth_samples, cfg.num_rx_active, cfg.num_xmit)),
            format!("{:?} (header)", (nd, nr, nx)),
        ));
    }
    cfg.depth_samples = nd;
    cfg.num_rx_active = nr;
    cfg.num_xmit = nx;
    if cfg.num_elements < nr {
        cfg.num_elements = nr;
    }

    let per_frame = nd * nr * nx;
    let payload = &bytes[HEADER_LEN..];
    (0..nf)
        .map(|f| {
            let data = payload[f * per_frame * 4..(f + 1) * per_frame * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            RFCube::from_data(cfg.clone(), data, f)
        })
        .collect()
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn save_config(config: &ProbeConfig, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(config)?)?;
    Ok(())
}

pub fn load_config(path: &Path) -> Result<ProbeConfig> {
    let cfg: ProbeConfig = serde_json::from_slice(&fs::read(path)?)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Write one cube plus its JSON sidecar.
pub fn save_cube(cube: &RFCube, path: &Path) -> Result<()> {
    let mut file = fs::File::create(path)?;
    write_cube(&mut file, std::slice::from_ref(cube))?;
    save_config(cube.config(), &sidecar_path(path))
}

/// Read the first frame of an RFC1 file, using the sidecar when present.
pub fn load_cube(path: &Path) -> Result<RFCube> {
    let side = sidecar_path(path);
    let config = if side.exists() { Some(load_config(&side)?) } else { None };
    let file = fs::File::open(path).map_err(|e| Error::MissingInput {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut frames = read_cube(std::io::BufReader::new(file), config.as_ref())?;
    Ok(frames.swap_remove(0))
}
