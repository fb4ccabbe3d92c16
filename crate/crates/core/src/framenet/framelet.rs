//! Convolutional framelet expansion of a plane through its block Hankel
//! lift, computed two ways: as matrix products on the lifted matrix and as
//! multichannel circular filtering followed by pooling.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::hankel::{self, HankelDims};
use crate::plane::RxXmitPlane;

const FRAME_TOL: f64 = 1e-10;

/// Outcome of a frame-condition check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameCheck {
    pub holds: bool,
    pub alpha: f64,
}

/// Whether `unpool * pool^T = alpha * I` for some `alpha > 0`, entrywise
/// within 1e-10. `alpha` is the mean diagonal entry.
pub fn check_frame_condition(pool: &DMatrix<f64>, unpool: &DMatrix<f64>) -> Result<FrameCheck> {
    if pool.shape() != unpool.shape() {
        return Err(Error::shape(format!("{:?}", pool.shape()), format!("{:?}", unpool.shape())));
    }
    let prod = unpool * pool.transpose();
    let n = prod.nrows();
    let alpha = prod.diagonal().mean();
    let dev = (&prod - DMatrix::<f64>::identity(n, n) * alpha).amax();
    Ok(FrameCheck {
        holds: alpha > 0.0 && dev <= FRAME_TOL,
        alpha,
    })
}

/// Pooling `pool` (`n x m`) and unpooling `unpool` (`n x m`) satisfying the
/// frame condition, with `n = n1 * n2` the plane size.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOperators {
    pool: DMatrix<f64>,
    unpool: DMatrix<f64>,
    alpha: f64,
}

impl FrameOperators {
    pub fn new(pool: DMatrix<f64>, unpool: DMatrix<f64>) -> Result<Self> {
        let check = check_frame_condition(&pool, &unpool)?;
        if !check.holds {
            return Err(Error::config("pooling pair violates the frame condition"));
        }
        Ok(FrameOperators {
            pool,
            unpool,
            alpha: check.alpha,
        })
    }

    /// `pool = unpool = I`, alpha 1.
    pub fn identity(n: usize) -> Self {
        FrameOperators {
            pool: DMatrix::identity(n, n),
            unpool: DMatrix::identity(n, n),
            alpha: 1.0,
        }
    }

    /// `pool = unpool = [I I]`, alpha 2: the redundant pair realized by a
    /// skip connection.
    pub fn redundant(n: usize) -> Self {
        let mut m = DMatrix::zeros(n, 2 * n);
        for i in 0..n {
            m[(i, i)] = 1.0;
            m[(i, n + i)] = 1.0;
        }
        FrameOperators {
            pool: m.clone(),
            unpool: m,
            alpha: 2.0,
        }
    }

    pub fn pool(&self) -> &DMatrix<f64> {
        &self.pool
    }

    pub fn unpool(&self) -> &DMatrix<f64> {
        &self.unpool
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    fn n(&self) -> usize {
        self.pool.nrows()
    }
}

/// Local bases `psi` (encoder) and `psi_dual` (decoder), each `d1*d2 x s`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    psi: DMatrix<f64>,
    psi_dual: DMatrix<f64>,
    d1: usize,
    d2: usize,
}

impl FilterBank {
    pub fn new(psi: DMatrix<f64>, psi_dual: DMatrix<f64>, d1: usize, d2: usize) -> Result<Self> {
        if psi.nrows() != d1 * d2 || psi.shape() != psi_dual.shape() || psi.ncols() == 0 {
            return Err(Error::shape(
                format!("{} x s filters", d1 * d2),
                format!("{:?} and {:?}", psi.shape(), psi_dual.shape()),
            ));
        }
        Ok(FilterBank { psi, psi_dual, d1, d2 })
    }

    /// `psi = psi_dual =` the leading `s` right singular vectors of the lift
    /// of `plane`.
    pub fn from_right_singular_vectors(plane: &RxXmitPlane, d1: usize, d2: usize, s: usize) -> Result<Self> {
        let lifted = hankel::block_hankel(plane, d1, d2)?.into_matrix();
        let d = d1 * d2;
        if s == 0 || s > d {
            return Err(Error::config(format!("channel count {s} must lie in 1..={d}")));
        }
        // eigenvectors of the Gram matrix are the right singular vectors
        let gram = lifted.tr_mul(&lifted);
        let eig = nalgebra::SymmetricEigen::new(gram);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let psi = DMatrix::from_fn(d, s, |r, c| eig.eigenvectors[(r, order[c])]);
        FilterBank::new(psi.clone(), psi, d1, d2)
    }

    pub fn channels(&self) -> usize {
        self.psi.ncols()
    }

    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }

    pub fn psi_dual(&self) -> &DMatrix<f64> {
        &self.psi_dual
    }

    /// `psi * psi_dual^T`; the projection onto the row space when the
    /// bases are orthonormal and equal.
    pub fn projection(&self) -> DMatrix<f64> {
        &self.psi * self.psi_dual.transpose()
    }

    /// Encoder filter `k`: column `k` of `psi` as a `d1 x d2` kernel, scaled
    /// by `1 / alpha`.
    pub fn encoder_filter(&self, k: usize, alpha: f64) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.d1, self.d2, self.psi.column(k).as_slice()) / alpha
    }

    /// Decoder filter `k`: column `k` of `psi_dual` as a kernel, divided by
    /// the lift multiplicity `d1 * d2`.
    pub fn decoder_filter(&self, k: usize) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.d1, self.d2, self.psi_dual.column(k).as_slice()) / (self.d1 * self.d2) as f64
    }
}

/// Coefficients `C`, one column per channel, one row per pooled position.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameletCoefficients {
    pub c: DMatrix<f64>,
}

fn check_shapes(n1: usize, n2: usize, ops: &FrameOperators, bank: &FilterBank) -> Result<HankelDims> {
    let dims = HankelDims::new(n1, n2, bank.d1, bank.d2)?;
    if ops.n() != n1 * n2 {
        return Err(Error::shape((n1 * n2).to_string(), ops.n().to_string()));
    }
    Ok(dims)
}

/// `out[i, j] = sum_{a, b} x[(i + a) % n1, (j + b) % n2] * h[a, b]`.
fn circular_correlate(x: &DMatrix<f64>, h: &DMatrix<f64>) -> DMatrix<f64> {
    let (n1, n2) = x.shape();
    let (d1, d2) = h.shape();
    DMatrix::from_fn(n1, n2, |i, j| {
        let mut acc = 0.0;
        for b in 0..d2 {
            for a in 0..d1 {
                acc += x[((i + a) % n1, (j + b) % n2)] * h[(a, b)];
            }
        }
        acc
    })
}

/// Convolution path: correlate with each encoder filter, then pool.
pub fn framelet_decompose(plane: &RxXmitPlane, ops: &FrameOperators, bank: &FilterBank) -> Result<FrameletCoefficients> {
    let (n1, n2) = plane.shape();
    check_shapes(n1, n2, ops, bank)?;
    let s = bank.channels();
    let mut filtered = DMatrix::zeros(n1 * n2, s);
    for k in 0..s {
        let resp = circular_correlate(plane.values(), &bank.encoder_filter(k, ops.alpha));
        filtered.column_mut(k).copy_from_slice(resp.as_slice());
    }
    Ok(FrameletCoefficients {
        c: ops.pool.tr_mul(&filtered),
    })
}

/// Matrix path: `C = pool^T H(F) psi / alpha`.
pub fn framelet_decompose_matrix(
    plane: &RxXmitPlane,
    ops: &FrameOperators,
    bank: &FilterBank,
) -> Result<FrameletCoefficients> {
    let (n1, n2) = plane.shape();
    let dims = check_shapes(n1, n2, ops, bank)?;
    let lifted = hankel::lift(plane.values(), dims);
    Ok(FrameletCoefficients {
        c: ops.pool.tr_mul(&(lifted * &bank.psi)) / ops.alpha,
    })
}

fn check_coefficients(coeffs: &FrameletCoefficients, ops: &FrameOperators, bank: &FilterBank) -> Result<()> {
    if coeffs.c.shape() != (ops.pool.ncols(), bank.channels()) {
        return Err(Error::shape(
            format!("{:?}", (ops.pool.ncols(), bank.channels())),
            format!("{:?}", coeffs.c.shape()),
        ));
    }
    Ok(())
}

/// Convolution path: unpool, then sum the circular convolutions with the
/// decoder filters.
pub fn framelet_reconstruct(
    coeffs: &FrameletCoefficients,
    shape: (usize, usize),
    ops: &FrameOperators,
    bank: &FilterBank,
) -> Result<RxXmitPlane> {
    let (n1, n2) = shape;
    check_shapes(n1, n2, ops, bank)?;
    check_coefficients(coeffs, ops, bank)?;
    let unpooled = &ops.unpool * &coeffs.c;
    let mut out = DMatrix::zeros(n1, n2);
    for k in 0..bank.channels() {
        let z = DMatrix::from_column_slice(n1, n2, unpooled.column(k).as_slice());
        out += hankel::circular_convolve(&z, &bank.decoder_filter(k));
    }
    RxXmitPlane::new(out)
}

/// Matrix path: unlift `unpool C psi_dual^T`.
pub fn framelet_reconstruct_matrix(
    coeffs: &FrameletCoefficients,
    shape: (usize, usize),
    ops: &FrameOperators,
    bank: &FilterBank,
) -> Result<RxXmitPlane> {
    let dims = check_shapes(shape.0, shape.1, ops, bank)?;
    check_coefficients(coeffs, ops, bank)?;
    let lifted = &ops.unpool * &coeffs.c * bank.psi_dual.transpose();
    RxXmitPlane::new(hankel::unlift_matrix(&lifted, dims))
}
