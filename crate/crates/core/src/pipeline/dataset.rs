use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::framenet::{save_checkpoint, train, FrameletNet, NetConfig, TrainPair, TrainParams, TrainingReport};
use crate::sampling::frame_seed;
use crate::simcore::{simulate_rf, Phantom, PhantomSpec, ProbeConfig, PulseSpec};

use super::run::{frame_mask, to_working, working_target};
use super::{Method, PathKind, PipelineConfig, Scheme};

/// Mixed into the base seed so mask seeds never collide with phantom seeds.
const MASK_SALT: u64 = 0x6d61_736b_5f73_6565;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub probe: ProbeConfig,
    pub phantom: PhantomSpec,
    /// Phantoms shared 5:1 between training and validation.
    pub num_phantoms: usize,
    pub planes_per_phantom: usize,
    /// Extra held-out phantoms.
    pub test_phantoms: usize,
    pub scheme: Scheme,
    pub path: Option<PathKind>,
    pub mla_factor: usize,
    pub seed: u64,
    /// Depth band, as fractions of the record, that planes are drawn from.
    pub depth_band: (f64, f64),
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            probe: ProbeConfig::default(),
            phantom: PhantomSpec::default(),
            num_phantoms: 60,
            planes_per_phantom: 10,
            test_phantoms: 0,
            scheme: Scheme::RxX4,
            path: None,
            mla_factor: 4,
            seed: 0,
            depth_band: (0.1, 0.95),
        }
    }
}

impl DatasetSpec {
    /// Pipeline settings that shape the interpolator's planes.
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            scheme: self.scheme,
            path: self.path,
            probe: self.probe.clone(),
            phantom: self.phantom.clone(),
            mla_factor: self.mla_factor,
            method: Method::ZeroFill,
            ..PipelineConfig::default()
        }
    }

    fn depth_range(&self) -> (usize, usize) {
        let n = self.probe.depth_samples as f64;
        ((self.depth_band.0 * n).floor() as usize, (self.depth_band.1 * n).ceil() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_phantoms == 0 || self.planes_per_phantom == 0 {
            return Err(Error::config("phantom and plane counts must be at least 1"));
        }
        let (lo, hi) = self.depth_range();
        let band = &self.depth_band;
        if !(0.0 <= band.0 && band.0 < band.1 && band.1 <= 1.0) {
            return Err(Error::config("depth band must satisfy 0 <= lo < hi <= 1"));
        }
        if self.planes_per_phantom > hi.min(self.probe.depth_samples) - lo {
            return Err(Error::config("more planes per phantom than depths in the band"));
        }
        self.pipeline().validate()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub split: Split,
    pub phantom: usize,
    pub phantom_seed: u64,
    pub depth: usize,
    pub mask_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: DatasetSpec,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        let text = fs::read(path).map_err(|e| Error::MissingInput {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Ok(serde_json::from_slice(&text)?)
    }

    /// Phantom seeds of one split, in manifest order.
    pub fn phantom_seeds(&self, split: Split) -> Vec<u64> {
        let mut seen = BTreeMap::new();
        for e in self.entries.iter().filter(|e| e.split == split) {
            seen.entry(e.phantom).or_insert(e.phantom_seed);
        }
        seen.into_values().collect()
    }
}

/// Plane listing without simulating anything. Phantoms, not planes, are
/// split 5:1 so no phantom feeds both training and validation.
pub fn make_manifest(spec: &DatasetSpec) -> Result<Manifest> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order: Vec<usize> = (0..spec.num_phantoms).collect();
    order.shuffle(&mut rng);
    let num_val = spec.num_phantoms / 6;
    let mut split = vec![Split::Train; spec.num_phantoms];
    for &p in &order[..num_val] {
        split[p] = Split::Val;
    }
    split.extend(std::iter::repeat(Split::Test).take(spec.test_phantoms));

    let (lo, hi) = spec.depth_range();
    let hi = hi.min(spec.probe.depth_samples);
    let mut entries = Vec::with_capacity(split.len() * spec.planes_per_phantom);
    for (p, &s) in split.iter().enumerate() {
        let mut depths = index::sample(&mut rng, hi - lo, spec.planes_per_phantom).into_vec();
        depths.sort_unstable();
        for d in depths {
            let id = entries.len();
            entries.push(ManifestEntry {
                id,
                split: s,
                phantom: p,
                phantom_seed: frame_seed(spec.seed, p),
                depth: lo + d,
                mask_seed: frame_seed(spec.seed ^ MASK_SALT, id),
            });
        }
    }
    Ok(Manifest {
        spec: spec.clone(),
        entries,
    })
}

/// Write `manifest.json` into `dir`; plane data is regenerated from it on
/// demand by [`load_dataset`].
pub fn make_dataset(spec: &DatasetSpec, dir: &Path) -> Result<Manifest> {
    let manifest = make_manifest(spec)?;
    fs::create_dir_all(dir)?;
    manifest.save(&dir.join("manifest.json"))?;
    Ok(manifest)
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub train: Vec<TrainPair>,
    pub val: Vec<TrainPair>,
    pub test: Vec<TrainPair>,
}

/// Simulate every phantom of the manifest once and cut the listed planes:
/// masked interpolator input and fully sampled target.
pub fn load_dataset(manifest: &Manifest) -> Result<Dataset> {
    let spec = &manifest.spec;
    let pipeline = spec.pipeline();
    let pulse = PulseSpec::for_probe(&spec.probe);
    let mut by_phantom: BTreeMap<usize, Vec<&ManifestEntry>> = BTreeMap::new();
    for e in &manifest.entries {
        by_phantom.entry(e.phantom).or_default().push(e);
    }
    let mut data = Dataset::default();
    for entries in by_phantom.values() {
        let mut rng = ChaCha8Rng::seed_from_u64(entries[0].phantom_seed);
        let phantom = Phantom::random(&spec.probe, &spec.phantom, &mut rng);
        let cube = simulate_rf(&phantom, &spec.probe, &pulse)?;
        let target = working_target(&pipeline, &cube)?;
        for e in entries {
            let mask = frame_mask(&pipeline, &spec.probe, e.mask_seed)?;
            let working = to_working(&pipeline, &cube, &mask)?;
            let pair = TrainPair {
                input: working.masked_plane(e.depth)?,
                target: target.plane(e.depth),
            };
            match e.split {
                Split::Train => data.train.push(pair),
                Split::Val => data.val.push(pair),
                Split::Test => data.test.push(pair),
            }
        }
    }
    Ok(data)
}

/// Build a net for the manifest's scheme, train it on the training split
/// with the validation split monitored, and save it to `checkpoint`.
pub fn train_on_dataset(
    manifest: &Manifest,
    net_config: &NetConfig,
    params: &TrainParams,
    checkpoint: &Path,
) -> Result<(FrameletNet<f32>, TrainingReport)> {
    let data = load_dataset(manifest)?;
    let mut net = FrameletNet::<f32>::build(net_config, params.seed)?;
    let report = train(&mut net, &data.train, &data.val, params)?;
    if let Some(parent) = checkpoint.parent() {
        fs::create_dir_all(parent)?;
    }
    save_checkpoint(&net, checkpoint)?;
    Ok((net, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn sixty_phantoms_split_five_to_one() {
        let m = make_manifest(&DatasetSpec::default()).unwrap();
        assert_eq!(m.count(Split::Train), 500);
        assert_eq!(m.count(Split::Val), 100);
        assert_eq!(m.count(Split::Test), 0);
    }

    #[test]
    fn same_seed_same_manifest() {
        let spec = DatasetSpec {
            test_phantoms: 3,
            ..DatasetSpec::default()
        };
        assert_eq!(make_manifest(&spec).unwrap(), make_manifest(&spec).unwrap());
        let other = make_manifest(&DatasetSpec { seed: 1, ..spec.clone() }).unwrap();
        assert_ne!(other, make_manifest(&spec).unwrap());
    }

    #[test]
    fn splits_are_disjoint() {
        let m = make_manifest(&DatasetSpec {
            test_phantoms: 4,
            ..DatasetSpec::default()
        })
        .unwrap();
        let mut owner = BTreeMap::new();
        for e in &m.entries {
            assert_eq!(*owner.entry(e.phantom).or_insert(e.split), e.split);
        }
        let ids: HashSet<usize> = m.entries.iter().map(|e| e.id).collect();
        assert_eq!(ids.len(), m.entries.len());
        let planes: HashSet<(usize, usize)> = m.entries.iter().map(|e| (e.phantom, e.depth)).collect();
        assert_eq!(planes.len(), m.entries.len());
        assert_eq!(m.phantom_seeds(Split::Test).len(), 4);
    }

    #[test]
    fn rejects_empty_counts() {
        let spec = DatasetSpec {
            num_phantoms: 0,
            ..DatasetSpec::default()
        };
        assert!(make_manifest(&spec).unwrap_err().is_config_error());
    }

    #[test]
    fn loaded_pairs_match_their_masks() {
        let spec = DatasetSpec {
            probe: ProbeConfig {
                num_elements: 48,
                num_rx_active: 16,
                num_xmit: 16,
                depth_samples: 96,
                ..ProbeConfig::default()
            },
            phantom: PhantomSpec {
                num_speckle: 60,
                ..PhantomSpec::default()
            },
            num_phantoms: 6,
            planes_per_phantom: 2,
            ..DatasetSpec::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let m = make_dataset(&spec, dir.path()).unwrap();
        assert_eq!(Manifest::load(&dir.path().join("manifest.json")).unwrap(), m);
        let data = load_dataset(&m).unwrap();
        assert_eq!((data.train.len(), data.val.len()), (10, 2));
        for p in data.train.iter().chain(&data.val) {
            assert_eq!(p.input.measured_count(), 16 * 16 / 4);
            for r in 0..16 {
                for c in 0..16 {
                    if !p.input.is_missing(r, c) {
                        assert_eq!(p.input.values()[(r, c)], p.target.values()[(r, c)]);
                    }
                }
            }
        }
    }
}
