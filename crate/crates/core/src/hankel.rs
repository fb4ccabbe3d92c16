//! Block Hankel lifting of Rx-Xmit planes under a periodic boundary, its
//! exact left inverse, and annihilating-filter diagnostics.
//!
//! Indexing is 0-based. For a plane `F` of size `n1 x n2` and a filter
//! support `d1 x d2`, the lifted matrix has `n1*n2` rows ordered
//! `(block b, row i) -> b*n1 + i` and `d1*d2` columns ordered
//! `(block c, col j) -> c*d1 + j`; its entry is
//! `F[(i + j) mod n1, (b + c) mod n2]`. Every plane entry occurs exactly
//! `d1*d2` times.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
pub use crate::plane::RxXmitPlane;

/// Relative singular-value threshold used for rank decisions.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HankelDims {
    pub n1: usize,
    pub n2: usize,
    pub d1: usize,
    pub d2: usize,
}

impl HankelDims {
    pub fn new(n1: usize, n2: usize, d1: usize, d2: usize) -> Result<Self> {
        if d1 == 0 || d2 == 0 || d1 > n1 || d2 > n2 {
            return Err(Error::config(format!(
                "filter {d1}x{d2} does not fit plane {n1}x{n2}"
            )));
        }
        Ok(HankelDims { n1, n2, d1, d2 })
    }

    pub fn rows(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn cols(&self) -> usize {
        self.d1 * self.d2
    }

    /// Number of times each plane entry occurs in the lifted matrix.
    pub fn multiplicity(&self) -> usize {
        self.d1 * self.d2
    }
}

/// Wrapped 1-D Hankel matrix: entry `(i, j) = f[(i + j) mod n1]`.
pub fn hankel_1d(f: &[f64], d1: usize) -> Result<DMatrix<f64>> {
    let n1 = f.len();
    if d1 == 0 || d1 > n1 {
        return Err(Error::config(format!("d1 = {d1} must lie in 1..={n1}")));
    }
    Ok(DMatrix::from_fn(n1, d1, |i, j| f[(i + j) % n1]))
}

/// Lift a dense matrix without validating missing flags.
pub(crate) fn lift(values: &DMatrix<f64>, dims: HankelDims) -> DMatrix<f64> {
    let HankelDims { n1, n2, d1, d2 } = dims;
    let mut out = DMatrix::zeros(n1 * n2, d1 * d2);
    lift_into(values, dims, &mut out);
    out
}

pub(crate) fn lift_into(values: &DMatrix<f64>, dims: HankelDims, out: &mut DMatrix<f64>) {
    let HankelDims { n1, n2, d1, d2 } = dims;
    let src = values.as_slice();
    let rows = n1 * n2;
    let dst = out.as_mut_slice();
    for c in 0..d2 {
        for j in 0..d1 {
            let col = &mut dst[(c * d1 + j) * rows..(c * d1 + j + 1) * rows];
            for b in 0..n2 {
                let y = (b + c) % n2;
                let plane_col = &src[y * n1..(y + 1) * n1];
                let row = &mut col[b * n1..(b + 1) * n1];
                // row[i] = plane_col[(i + j) mod n1]
                let split = n1 - j;
                row[..split].copy_from_slice(&plane_col[j..]);
                row[split..].copy_from_slice(&plane_col[..j]);
            }
        }
    }
}

/// Adjoint of the lifting: each plane entry receives the sum of its
/// `d1*d2` occurrences in `matrix`.
pub fn hankel_adjoint(matrix: &DMatrix<f64>, dims: HankelDims) -> DMatrix<f64> {
    let HankelDims { n1, n2, d1, d2 } = dims;
    assert_eq!(matrix.shape(), (n1 * n2, d1 * d2), "lifted matrix shape");
    let rows = n1 * n2;
    let src = matrix.as_slice();
    let mut out = DMatrix::<f64>::zeros(n1, n2);
    let dst = out.as_mut_slice();
    for c in 0..d2 {
        for j in 0..d1 {
            let col = &src[(c * d1 + j) * rows..(c * d1 + j + 1) * rows];
            for b in 0..n2 {
                let y = (b + c) % n2;
                let plane_col = &mut dst[y * n1..(y + 1) * n1];
                let row = &col[b * n1..(b + 1) * n1];
                let split = n1 - j;
                for (p, r) in plane_col[j..].iter_mut().zip(&row[..split]) {
                    *p += r;
                }
                for (p, r) in plane_col[..j].iter_mut().zip(&row[split..]) {
                    *p += r;
                }
            }
        }
    }
    out
}

/// Exact left inverse of [`lift`]: the occurrence average.
pub(crate) fn unlift_matrix(matrix: &DMatrix<f64>, dims: HankelDims) -> DMatrix<f64> {
    let mut out = hankel_adjoint(matrix, dims);
    out /= dims.multiplicity() as f64;
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockHankel {
    matrix: DMatrix<f64>,
    dims: HankelDims,
}

impl BlockHankel {
    /// Wrap an arbitrary matrix of lifted shape, e.g. a low-rank estimate.
    pub fn from_matrix(matrix: DMatrix<f64>, dims: HankelDims) -> Result<Self> {
        if matrix.shape() != (dims.rows(), dims.cols()) {
            return Err(Error::shape(
                format!("{}x{}", dims.rows(), dims.cols()),
                format!("{}x{}", matrix.nrows(), matrix.ncols()),
            ));
        }
        Ok(BlockHankel { matrix, dims })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dims(&self) -> HankelDims {
        self.dims
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    /// Average every plane entry over its occurrences.
    pub fn unlift(&self) -> RxXmitPlane {
        RxXmitPlane::from_fn(self.dims.n1, self.dims.n2, {
            let m = unlift_matrix(&self.matrix, self.dims);
            move |i, j| m[(i, j)]
        })
    }

    pub fn numerical_rank(&self, rel_tol: f64) -> usize {
        numerical_rank(&self.matrix, rel_tol)
    }
}

/// Lift a fully measured plane. Planes with missing samples are rejected;
/// call [`RxXmitPlane::zero_filled`] first to lift a zero-filled candidate.
pub fn block_hankel(plane: &RxXmitPlane, d1: usize, d2: usize) -> Result<BlockHankel> {
    if plane.has_missing() {
        return Err(Error::NoMeasurements(
            "plane has missing entries; zero-fill explicitly before lifting".into(),
        ));
    }
    let dims = HankelDims::new(plane.n1(), plane.n2(), d1, d2)?;
    Ok(BlockHankel {
        matrix: lift(plane.values(), dims),
        dims,
    })
}

/// Multi-frame lifting: the per-frame block Hankel matrices side by side.
#[derive(Debug, Clone)]
pub struct ExtendedHankel {
    blocks: Vec<BlockHankel>,
}

impl ExtendedHankel {
    pub fn new(frames: &[RxXmitPlane], d1: usize, d2: usize) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::config("extended Hankel needs at least one frame"))?;
        let blocks = frames
            .iter()
            .map(|f| {
                if f.shape() != first.shape() {
                    return Err(Error::shape(
                        format!("{:?}", first.shape()),
                        format!("{:?}", f.shape()),
                    ));
                }
                block_hankel(f, d1, d2)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ExtendedHankel { blocks })
    }

    pub fn num_frames(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[BlockHankel] {
        &self.blocks
    }

    pub fn dims(&self) -> HankelDims {
        self.blocks[0].dims
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        concat_columns(self.blocks.iter().map(|b| &b.matrix))
    }

    pub fn numerical_rank(&self, rel_tol: f64) -> usize {
        numerical_rank(&self.matrix(), rel_tol)
    }
}

pub(crate) fn concat_columns<'a>(parts: impl Iterator<Item = &'a DMatrix<f64>>) -> DMatrix<f64> {
    let parts: Vec<_> = parts.collect();
    let rows = parts.first().map_or(0, |p| p.nrows());
    let cols = parts.iter().map(|p| p.ncols()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for p in parts {
        data.extend_from_slice(p.as_slice());
    }
    DMatrix::from_vec(rows, cols, data)
}

/// Count singular values above `rel_tol * sigma_max`. Zero matrices have rank 0.
pub fn numerical_rank(matrix: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = singular_values(matrix);
    let top = sv.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s / top > rel_tol).count()
}

/// Singular values in descending order.
pub fn singular_values(matrix: &DMatrix<f64>) -> Vec<f64> {
    if matrix.is_empty() {
        return Vec::new();
    }
    let mut sv: Vec<f64> = if matrix.nrows() >= matrix.ncols() {
        matrix.clone().svd(false, false).singular_values.iter().cloned().collect()
    } else {
        matrix.transpose().svd(false, false).singular_values.iter().cloned().collect()
    };
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnihilatingFilter {
    taps: DMatrix<f64>,
}

impl AnnihilatingFilter {
    pub fn new(taps: DMatrix<f64>) -> Result<Self> {
        if taps.is_empty() || taps.iter().all(|&t| t == 0.0) {
            return Err(Error::config("annihilating filter must have a nonzero tap"));
        }
        Ok(AnnihilatingFilter { taps })
    }

    pub fn taps(&self) -> &DMatrix<f64> {
        &self.taps
    }

    /// `vec(K)` (column stacking) in reversed order.
    pub fn reversed_vec(&self) -> Vec<f64> {
        self.taps.as_slice().iter().rev().cloned().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    pub value: f64,
    /// Set when the plane is identically zero and the ratio is undefined.
    pub degenerate: bool,
}

/// `||H(F) rev(vec K)|| / ||F||`; zero exactly when `K` annihilates `F`
/// under circular convolution.
pub fn annihilation_residual(plane: &RxXmitPlane, filter: &AnnihilatingFilter) -> Result<Residual> {
    let (d1, d2) = filter.taps.shape();
    let lifted = block_hankel(plane, d1, d2)?;
    let norm = plane.norm();
    if norm == 0.0 {
        return Ok(Residual {
            value: 0.0,
            degenerate: true,
        });
    }
    let k = DMatrix::from_vec(d1 * d2, 1, filter.reversed_vec());
    let r = lifted.matrix() * k;
    Ok(Residual {
        value: r.norm() / norm,
        degenerate: false,
    })
}

/// Circular 2-D convolution `(F * K)[x, y] = sum_{u,v} F[x-u, y-v] K[u, v]`.
pub fn circular_convolve(plane: &DMatrix<f64>, kernel: &DMatrix<f64>) -> DMatrix<f64> {
    let (n1, n2) = plane.shape();
    let (d1, d2) = kernel.shape();
    DMatrix::from_fn(n1, n2, |x, y| {
        let mut acc = 0.0;
        for v in 0..d2 {
            for u in 0..d1 {
                let k = kernel[(u, v)];
                if k != 0.0 {
                    acc += plane[((x + n1 * d1 - u) % n1, (y + n2 * d2 - v) % n2)] * k;
                }
            }
        }
        acc
    })
}
