use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::run::{check_nonempty, run_on_frames, simulate_sequence, Interpolator, MetricsRow};
use super::{Method, PipelineConfig, Scheme};

/// Method names in benchmark order.
pub const METHOD_ORDER: [&str; 4] = ["zero_fill", "linear", "aloha", "cnn"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    /// Probe, phantom and method parameters shared by every cell.
    pub base: PipelineConfig,
    pub schemes: Vec<Scheme>,
    /// Any of `zero_fill`, `linear`, `aloha`, `cnn`.
    pub methods: Vec<String>,
    /// Network checkpoint per scheme, required when `cnn` is listed.
    pub checkpoints: BTreeMap<Scheme, PathBuf>,
    /// Phantom seeds; each gives one scored frame per cell.
    pub seeds: Vec<u64>,
}

impl BenchmarkSpec {
    fn method(&self, name: &str, scheme: Scheme) -> Result<Method> {
        Ok(match name {
            "zero_fill" => Method::ZeroFill,
            "linear" => Method::Linear,
            "aloha" => Method::Aloha,
            "cnn" => Method::Cnn {
                checkpoint: self
                    .checkpoints
                    .get(&scheme)
                    .cloned()
                    .ok_or_else(|| Error::config(format!("no checkpoint for scheme {scheme}")))?,
            },
            other => return Err(Error::config(format!("unknown method {other}"))),
        })
    }

    /// Configs of every cell, validated before anything runs.
    fn cells(&self) -> Result<Vec<PipelineConfig>> {
        check_nonempty(&self.schemes, "scheme list")?;
        check_nonempty(&self.methods, "method list")?;
        check_nonempty(&self.seeds, "seed list")?;
        let mut out = Vec::new();
        for &scheme in &self.schemes {
            for name in &self.methods {
                let cfg = PipelineConfig {
                    scheme,
                    path: None,
                    method: self.method(name, scheme)?,
                    out_dir: None,
                    ..self.base.clone()
                };
                cfg.validate()?;
                out.push(cfg);
            }
        }
        Ok(out)
    }
}

/// Mean scores of one method on one scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub method: String,
    pub scheme: Scheme,
    pub frames: usize,
    pub psnr_db: f64,
    pub ssim: f64,
    /// Mean over frames with a cyst in view.
    pub cnr: Option<f64>,
    pub ms_per_plane: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTable {
    pub rows: Vec<BenchmarkRow>,
    /// Every per-frame row behind the means.
    pub frames: Vec<MetricsRow>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl BenchmarkTable {
    /// Aggregate per-frame rows into one row per (method, scheme). Fails
    /// when any requested cell has no data.
    pub fn from_frames(frames: Vec<MetricsRow>, methods: &[String], schemes: &[Scheme]) -> Result<Self> {
        let mut rows = Vec::with_capacity(methods.len() * schemes.len());
        for m in methods {
            for &s in schemes {
                let cell: Vec<&MetricsRow> = frames.iter().filter(|r| &r.method == m && r.scheme == s).collect();
                if cell.is_empty() {
                    return Err(Error::config(format!("no results for method {m} on scheme {s}")));
                }
                rows.push(BenchmarkRow {
                    method: m.clone(),
                    scheme: s,
                    frames: cell.len(),
                    psnr_db: mean(cell.iter().map(|r| r.psnr_db)).unwrap_or(f64::NAN),
                    ssim: mean(cell.iter().map(|r| r.ssim)).unwrap_or(f64::NAN),
                    cnr: mean(cell.iter().filter_map(|r| r.cnr)),
                    ms_per_plane: mean(cell.iter().map(|r| r.ms_per_plane)).unwrap_or(f64::NAN),
                });
            }
        }
        Ok(BenchmarkTable { rows, frames })
    }

    pub fn row(&self, method: &str, scheme: Scheme) -> Option<&BenchmarkRow> {
        self.rows.iter().find(|r| r.method == method && r.scheme == scheme)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,scheme,frames,psnr_db,ssim,cnr,ms_per_plane\n");
        for r in &self.rows {
            let cnr = r.cnr.map_or(String::new(), |v| format!("{v:.4}"));
            let _ = writeln!(
                s,
                "{},{},{},{:.4},{:.4},{},{:.3}",
                r.method, r.scheme, r.frames, r.psnr_db, r.ssim, cnr, r.ms_per_plane
            );
        }
        s
    }

    pub fn frames_csv(&self) -> String {
        let mut s = String::from(MetricsRow::CSV_HEADER);
        s.push('\n');
        for r in &self.frames {
            s.push_str(&r.csv_line());
            s.push('\n');
        }
        s
    }

    /// Timing and quality in one table; metrics are taken on the image
    /// before scan conversion.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("Metrics computed on pre-scan-conversion B-mode images.\n\n");
        s.push_str("| Method | Scheme | Time (ms/plane) | PSNR (dB) | SSIM | CNR |\n");
        s.push_str("|---|---|---:|---:|---:|---:|\n");
        for r in &self.rows {
            let cnr = r.cnr.map_or("n/a".to_string(), |v| format!("{v:.3}"));
            let _ = writeln!(
                s,
                "| {} | {} | {:.3} | {:.2} | {:.4} | {} |",
                r.method, r.scheme, r.ms_per_plane, r.psnr_db, r.ssim, cnr
            );
        }
        s
    }

    /// `benchmark.csv`, `benchmark_frames.csv` and `benchmark.md`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("benchmark.csv"), self.to_csv())?;
        fs::write(dir.join("benchmark_frames.csv"), self.frames_csv())?;
        fs::write(dir.join("benchmark.md"), self.to_markdown())?;
        Ok(())
    }
}

/// Score every method on every scheme over the same simulated frames.
pub fn benchmark(spec: &BenchmarkSpec) -> Result<BenchmarkTable> {
    let cells = spec.cells()?;
    let interpolators = cells
        .iter()
        .map(Interpolator::from_config)
        .collect::<Result<Vec<_>>>()?;
    let mut frames = Vec::with_capacity(cells.len() * spec.seeds.len());
    for &seed in &spec.seeds {
        let (phantom, cubes) = simulate_sequence(&PipelineConfig {
            seed,
            ..spec.base.clone()
        })?;
        for (cfg, interp) in cells.iter().zip(&interpolators) {
            let out = run_on_frames(cfg, interp, phantom.clone(), &cubes)?;
            let mut row = out.metrics;
            row.frame = seed as usize;
            frames.push(row);
        }
    }
    BenchmarkTable::from_frames(frames, &spec.methods, &spec.schemes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simcore::{PhantomSpec, ProbeConfig};

    fn spec() -> BenchmarkSpec {
        BenchmarkSpec {
            base: PipelineConfig {
                probe: ProbeConfig {
                    num_elements: 48,
                    num_rx_active: 16,
                    num_xmit: 16,
                    depth_samples: 96,
                    ..ProbeConfig::default()
                },
                phantom: PhantomSpec {
                    num_speckle: 80,
                    ..PhantomSpec::default()
                },
                ..PipelineConfig::default()
            },
            schemes: vec![Scheme::RxX4, Scheme::RxXmit4x2],
            methods: vec!["zero_fill".into(), "linear".into()],
            checkpoints: BTreeMap::new(),
            seeds: vec![3],
        }
    }

    #[test]
    fn one_row_per_method_and_scheme() {
        let t = benchmark(&spec()).unwrap();
        assert_eq!(t.rows.len(), 4);
        assert!(t.row("linear", Scheme::RxXmit4x2).is_some());
        assert_eq!(t.to_markdown().lines().filter(|l| l.starts_with("| ")).count(), 5);
        assert_eq!(t.to_csv().lines().count(), 5);
    }

    #[test]
    fn rerun_reproduces_quality_columns() {
        let a = benchmark(&spec()).unwrap();
        let b = benchmark(&spec()).unwrap();
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert_eq!(x.psnr_db.to_bits(), y.psnr_db.to_bits());
            assert_eq!(x.ssim.to_bits(), y.ssim.to_bits());
        }
    }

    #[test]
    fn missing_cell_is_an_error() {
        let t = benchmark(&spec()).unwrap();
        let methods = vec!["zero_fill".to_string(), "aloha".to_string()];
        assert!(BenchmarkTable::from_frames(t.frames, &methods, &[Scheme::RxX4]).is_err());
    }

    #[test]
    fn cnn_without_checkpoint_is_rejected() {
        let mut s = spec();
        s.methods.push("cnn".into());
        assert!(benchmark(&s).unwrap_err().is_config_error());
    }
}
