//! Receive and transmit sub-sampling masks and the projection onto the
//! measured index set.
//!
//! Masks serialize as `"MSK1"`, a little-endian u32 header length, a JSON
//! header, then the keep-matrix bit-packed LSB first in column-major order
//! (rx fastest).

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plane::RxXmitPlane;

pub const MASK_MAGIC: &[u8; 4] = b"MSK1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    RxRandom,
    RxXmit,
}

/// Whether each transmit column draws its own receive pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnPattern {
    #[default]
    Independent,
    Shared,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingMask {
    pub kind: MaskKind,
    keep: DMatrix<bool>,
    pub rx_factor: usize,
    pub xmit_factor: usize,
    pub seed: u64,
}

/// Receive channel that is always acquired.
pub fn center_index(num_rx: usize) -> usize {
    num_rx / 2
}

/// Per-frame seed derived from a base seed (splitmix64 finalizer).
pub fn frame_seed(base_seed: u64, frame_index: usize) -> u64 {
    let mut z = base_seed ^ (frame_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_rx_factor(num_rx: usize, factor: usize) -> Result<()> {
    if !matches!(factor, 1 | 2 | 4 | 8) {
        return Err(Error::config(format!("rx factor {factor} not in {{1, 2, 4, 8}}")));
    }
    if factor > num_rx {
        return Err(Error::config(format!("rx factor {factor} exceeds {num_rx} channels")));
    }
    Ok(())
}

fn random_column(rng: &mut ChaCha8Rng, num_rx: usize, factor: usize) -> Vec<bool> {
    let keep_count = num_rx.div_ceil(factor);
    let center = center_index(num_rx);
    let mut col = vec![false; num_rx];
    col[center] = true;
    // draw the rest among the other channels, then map past the center
    for i in sample(rng, num_rx - 1, keep_count - 1).into_iter() {
        col[if i >= center { i + 1 } else { i }] = true;
    }
    col
}

fn fill_columns(
    num_rx: usize,
    columns: &[usize],
    num_xmit: usize,
    factor: usize,
    seed: u64,
    pattern: ColumnPattern,
) -> DMatrix<bool> {
    let mut keep = DMatrix::from_element(num_rx, num_xmit, false);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shared = random_column(&mut rng, num_rx, factor);
    for (n, &k) in columns.iter().enumerate() {
        let col = match pattern {
            ColumnPattern::Shared => shared.clone(),
            ColumnPattern::Independent if n == 0 => shared.clone(),
            ColumnPattern::Independent => random_column(&mut rng, num_rx, factor),
        };
        for (r, v) in col.into_iter().enumerate() {
            keep[(r, k)] = v;
        }
    }
    keep
}

/// Random receive sub-sampling: every column keeps `ceil(num_rx / factor)`
/// channels, always including [`center_index`].
pub fn make_rx_mask(num_rx: usize, num_xmit: usize, factor: usize, seed: u64) -> Result<SamplingMask> {
    make_rx_mask_with(num_rx, num_xmit, factor, seed, ColumnPattern::Independent)
}

pub fn make_rx_mask_with(
    num_rx: usize,
    num_xmit: usize,
    factor: usize,
    seed: u64,
    pattern: ColumnPattern,
) -> Result<SamplingMask> {
    check_rx_factor(num_rx, factor)?;
    let columns: Vec<usize> = (0..num_xmit).collect();
    Ok(SamplingMask {
        kind: MaskKind::RxRandom,
        keep: fill_columns(num_rx, &columns, num_xmit, factor, seed, pattern),
        rx_factor: factor,
        xmit_factor: 1,
        seed,
    })
}

/// Uniform transmit decimation (columns `0, f, 2f, ...` survive) combined
/// with random receive sub-sampling of the surviving columns.
pub fn make_rx_xmit_mask(
    num_rx: usize,
    num_xmit: usize,
    rx_factor: usize,
    xmit_factor: usize,
    seed: u64,
) -> Result<SamplingMask> {
    check_rx_factor(num_rx, rx_factor)?;
    if xmit_factor == 0 || num_xmit % xmit_factor != 0 {
        return Err(Error::config(format!(
            "xmit factor {xmit_factor} does not divide {num_xmit}"
        )));
    }
    let columns: Vec<usize> = (0..num_xmit).step_by(xmit_factor).collect();
    Ok(SamplingMask {
        kind: MaskKind::RxXmit,
        keep: fill_columns(num_rx, &columns, num_xmit, rx_factor, seed, ColumnPattern::Independent),
        rx_factor,
        xmit_factor,
        seed,
    })
}

impl SamplingMask {
    pub fn full(num_rx: usize, num_xmit: usize) -> Self {
        SamplingMask {
            kind: MaskKind::RxRandom,
            keep: DMatrix::from_element(num_rx, num_xmit, true),
            rx_factor: 1,
            xmit_factor: 1,
            seed: 0,
        }
    }

    pub fn from_keep(kind: MaskKind, keep: DMatrix<bool>, rx_factor: usize, xmit_factor: usize, seed: u64) -> Self {
        SamplingMask {
            kind,
            keep,
            rx_factor,
            xmit_factor,
            seed,
        }
    }

    pub fn keep(&self) -> &DMatrix<bool> {
        &self.keep
    }

    pub fn shape(&self) -> (usize, usize) {
        self.keep.shape()
    }

    pub fn is_kept(&self, rx: usize, xmit: usize) -> bool {
        self.keep[(rx, xmit)]
    }

    pub fn kept_count(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn fraction_kept(&self) -> f64 {
        self.kept_count() as f64 / self.keep.len() as f64
    }

    pub fn column_kept(&self, xmit: usize) -> usize {
        self.keep.column(xmit).iter().filter(|&&k| k).count()
    }

    /// Transmit columns with at least one kept channel.
    pub fn kept_columns(&self) -> Vec<usize> {
        (0..self.keep.ncols()).filter(|&k| self.column_kept(k) > 0).collect()
    }

    /// Mask restricted to the given columns, in order.
    pub fn select_columns(&self, columns: &[usize]) -> SamplingMask {
        let keep = DMatrix::from_fn(self.keep.nrows(), columns.len(), |r, c| self.keep[(r, columns[c])]);
        SamplingMask { keep, ..self.clone() }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write(&mut out)?;
        Ok(out)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let header = MaskHeader {
            kind: self.kind,
            rx_factor: self.rx_factor,
            xmit_factor: self.xmit_factor,
            seed: self.seed,
            num_rx: self.keep.nrows(),
            num_xmit: self.keep.ncols(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut bits = vec![0u8; self.keep.len().div_ceil(8)];
        for (i, &k) in self.keep.iter().enumerate() {
            if k {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        w.write_all(MASK_MAGIC)?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        w.write_all(&bits)?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() < 8 || &bytes[..4] != MASK_MAGIC {
            return Err(Error::Parse {
                offset: 0,
                message: "bad mask magic, expected \"MSK1\"".into(),
            });
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let json = bytes.get(8..8 + hlen).ok_or(Error::Truncated {
            expected: hlen,
            actual: bytes.len() - 8,
        })?;
        let header: MaskHeader = serde_json::from_slice(json).map_err(|e| Error::Parse {
            offset: 8,
            message: e.to_string(),
        })?;
        let n = header.num_rx * header.num_xmit;
        let bits = &bytes[8 + hlen..];
        if bits.len() != n.div_ceil(8) {
            return Err(Error::Truncated {
                expected: n.div_ceil(8),
                actual: bits.len(),
            });
        }
        let keep = DMatrix::from_iterator(
            header.num_rx,
            header.num_xmit,
            (0..n).map(|i| bits[i / 8] >> (i % 8) & 1 == 1),
        );
        Ok(SamplingMask {
            kind: header.kind,
            keep,
            rx_factor: header.rx_factor,
            xmit_factor: header.xmit_factor,
            seed: header.seed,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct MaskHeader {
    kind: MaskKind,
    rx_factor: usize,
    xmit_factor: usize,
    seed: u64,
    num_rx: usize,
    num_xmit: usize,
}

/// Projection onto the measured set: kept samples are copied, the rest are
/// zeroed and flagged missing. Samples already missing stay missing.
pub fn apply_mask(plane: &RxXmitPlane, mask: &SamplingMask) -> Result<RxXmitPlane> {
    if plane.shape() != mask.shape() {
        return Err(Error::shape(format!("{:?}", mask.shape()), format!("{:?}", plane.shape())));
    }
    let missing = plane.missing().zip_map(&mask.keep, |m, k| m || !k);
    RxXmitPlane::with_missing(plane.values().clone(), missing)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn x4_keeps_sixteen_with_center() {
        let m = make_rx_mask(64, 96, 4, 7).unwrap();
        for k in 0..96 {
            assert_eq!(m.column_kept(k), 16);
            assert!(m.is_kept(32, k));
        }
        assert_eq!(m.kind, MaskKind::RxRandom);
    }

    #[test]
    fn x8_keeps_one_eighth() {
        let m = make_rx_mask(64, 96, 8, 3).unwrap();
        assert!((0..96).all(|k| m.column_kept(k) == 8));
        assert_eq!(m.fraction_kept(), 0.125);
    }

    #[test]
    fn factor_one_is_identity_sampling() {
        let m = make_rx_mask(64, 96, 1, 3).unwrap();
        assert!(m.keep().iter().all(|&k| k));
        assert!(make_rx_mask(4, 3, 8, 0).is_err());
        assert!(make_rx_mask(64, 3, 3, 0).is_err());
    }

    #[test]
    fn rx_xmit_scheme_counts() {
        let m = make_rx_xmit_mask(64, 96, 4, 2, 11).unwrap();
        assert_eq!(m.kept_columns(), (0..96).step_by(2).collect::<Vec<_>>());
        for k in 0..96 {
            assert_eq!(m.column_kept(k), if k % 2 == 0 { 16 } else { 0 });
        }
        assert_eq!(m.fraction_kept(), 1.0 / 8.0);
        assert!(make_rx_xmit_mask(64, 96, 4, 5, 0).is_err());
    }

    #[test]
    fn degenerate_xmit_factors() {
        let a = make_rx_xmit_mask(64, 96, 4, 1, 5).unwrap();
        let b = make_rx_mask(64, 96, 4, 5).unwrap();
        assert_eq!(a.keep(), b.keep());
        let c = make_rx_xmit_mask(8, 6, 1, 2, 5).unwrap();
        for k in 0..6 {
            assert_eq!(c.column_kept(k), if k % 2 == 0 { 8 } else { 0 });
        }
    }

    #[test]
    fn shared_pattern_repeats_column() {
        let m = make_rx_mask_with(64, 10, 4, 1, ColumnPattern::Shared).unwrap();
        for k in 1..10 {
            assert_eq!(m.keep().column(k), m.keep().column(0));
        }
    }

    #[test]
    fn apply_mask_projection() {
        let plane = RxXmitPlane::from_fn(4, 3, |r, k| (r * 3 + k) as f64 + 1.0);
        let full = SamplingMask::full(4, 3);
        assert_eq!(apply_mask(&plane, &full).unwrap(), plane);

        let mut keep = DMatrix::from_element(4, 3, true);
        keep.column_mut(1).fill(false);
        let mask = SamplingMask::from_keep(MaskKind::RxXmit, keep, 1, 3, 0);
        let once = apply_mask(&plane, &mask).unwrap();
        assert!((0..4).all(|r| once.is_missing(r, 1) && once.values()[(r, 1)] == 0.0));
        assert_eq!(once.values()[(2, 2)], plane.values()[(2, 2)]);
        assert_eq!(apply_mask(&once, &mask).unwrap(), once);
        assert!(apply_mask(&RxXmitPlane::zeros(3, 3), &mask).is_err());
    }

    #[test]
    fn seeds_are_reproducible_and_distinct() {
        let base = make_rx_mask(64, 96, 4, 1234).unwrap();
        assert_eq!(base, make_rx_mask(64, 96, 4, 1234).unwrap());
        for s in 0..100u64 {
            let other = make_rx_mask(64, 96, 4, s).unwrap();
            assert_ne!(other.keep(), base.keep(), "seed {s}");
        }
        assert_ne!(frame_seed(1, 0), frame_seed(1, 1));
    }

    #[test]
    fn count_and_center_over_many_seeds() {
        for factor in [1, 2, 4, 8] {
            for seed in 0..1000u64 {
                let m = make_rx_mask(64, 4, factor, seed).unwrap();
                for k in 0..4 {
                    assert_eq!(m.column_kept(k), 64usize.div_ceil(factor));
                    assert!(m.is_kept(32, k));
                }
            }
        }
    }

    #[test]
    fn odd_channel_counts_round_up() {
        let m = make_rx_mask(10, 5, 4, 2).unwrap();
        assert!((0..5).all(|k| m.column_kept(k) == 3 && m.is_kept(5, k)));
    }

    #[test]
    fn corrupted_mask_bytes_are_rejected() {
        let mut b = make_rx_mask(8, 5, 2, 1).unwrap().to_bytes().unwrap();
        b.pop();
        assert!(matches!(SamplingMask::read(&b[..]), Err(Error::Truncated { .. })));
        assert!(matches!(SamplingMask::read(&b"NOPE0000"[..]), Err(Error::Parse { offset: 0, .. })));
    }

    proptest! {
        #[test]
        fn mask_bytes_round_trip(rx in 1usize..40, xm in 1usize..20, seed in any::<u64>(), f in prop::sample::select(vec![1usize, 2, 4, 8])) {
            prop_assume!(f <= rx);
            let m = make_rx_mask(rx, xm, f, seed).unwrap();
            let back = SamplingMask::read(&m.to_bytes().unwrap()[..]).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
