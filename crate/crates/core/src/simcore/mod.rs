//! Synthetic focused-beam RF acquisition from point-scatterer phantoms.

mod config;
mod io;
mod phantom;
mod simulate;

pub use config::{Geometry, ProbeConfig, PulseSpec};
pub use io::{load_config, load_cube, read_cube, save_config, save_cube, sidecar_path, write_cube, RFC1_MAGIC};
pub use phantom::{Cyst, Phantom, PhantomSpec, Scatterer};
pub use simulate::{simulate_rf, RFCube};
