//! Dense feature maps and the matrix kernels behind the convolutions.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use serde::{Deserialize, Serialize};

/// Element type of the network: `f64` for checks and training, `f32` for
/// fast inference.
pub trait Scalar: Float + Default + Debug + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static {
    #[allow(clippy::too_many_arguments)]
    /// `c = alpha * a * b + beta * c` with explicit row and column strides.
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("finite constant")
    }

    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major matrix view over a slice.
#[derive(Clone, Copy)]
pub(crate) struct View<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a, T> View<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix view size");
        View {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        View {
            transposed: !self.transposed,
            ..self
        }
    }

    fn shape(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c = alpha * a * b + beta * c`, `c` row-major `m x n`.
pub(crate) fn gemm<T: Scalar>(alpha: T, a: View<'_, T>, b: View<'_, T>, beta: T, c: &mut [T], n: usize) {
    let (m, k) = a.shape();
    let (kb, nb) = b.shape();
    assert_eq!(k, kb, "inner dimensions");
    assert_eq!(n, nb, "output columns");
    assert_eq!(c.len(), m * n, "output size");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Periodic boundary, matching the periodic Hankel lift.
    #[default]
    Circular,
    Zero,
}

/// Feature maps laid out `[channel][batch][row][col]`, so that a
/// convolution over the whole batch is one matrix product.
#[derive(Debug, Clone, PartialEq)]
pub struct Maps<T> {
    pub channels: usize,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Maps<T> {
    pub fn zeros(channels: usize, batch: usize, height: usize, width: usize) -> Self {
        Maps {
            channels,
            batch,
            height,
            width,
            data: vec![T::zero(); channels * batch * height * width],
        }
    }

    /// Spatial positions over the whole batch.
    pub fn positions(&self) -> usize {
        self.batch * self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let p = self.positions();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let p = self.positions();
        &mut self.data[c * p..(c + 1) * p]
    }

    pub fn same_geometry(&self, other: &Maps<T>) -> bool {
        self.batch == other.batch && self.height == other.height && self.width == other.width
    }

    /// Channel-wise concatenation.
    pub fn concat(&self, other: &Maps<T>) -> Maps<T> {
        assert!(self.same_geometry(other), "concatenated maps differ in geometry");
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Maps {
            channels: self.channels + other.channels,
            data,
            ..*self
        }
    }

    /// Split into the first `c` channels and the rest.
    pub fn split(mut self, c: usize) -> (Maps<T>, Maps<T>) {
        let rest = self.data.split_off(c * self.positions());
        let second = Maps {
            channels: self.channels - c,
            data: rest,
            ..self
        };
        self.channels = c;
        (self, second)
    }
}

fn wrap(i: isize, n: usize, padding: Padding) -> Option<usize> {
    if i >= 0 && (i as usize) < n {
        return Some(i as usize);
    }
    match padding {
        Padding::Circular => Some(i.rem_euclid(n as isize) as usize),
        Padding::Zero => None,
    }
}

/// `dst[x] = src[x + dx]`, out-of-range taps wrapped or zeroed.
fn shift_row<T: Scalar>(src: &[T], dst: &mut [T], dx: isize, padding: Padding) {
    let w = src.len() as isize;
    let lo = (-dx).clamp(0, w) as usize;
    let hi = (w - dx).clamp(0, w) as usize;
    if lo < hi {
        let s = (lo as isize + dx) as usize;
        dst[lo..hi].copy_from_slice(&src[s..s + hi - lo]);
    }
    for x in (0..lo).chain(hi..w as usize) {
        dst[x] = match wrap(x as isize + dx, w as usize, padding) {
            Some(sx) => src[sx],
            None => T::zero(),
        };
    }
}

/// Adjoint of [`shift_row`]: `dst[x + dx] += g[x]`.
fn shift_add_row<T: Scalar>(g: &[T], dst: &mut [T], dx: isize, padding: Padding) {
    let w = g.len() as isize;
    let lo = (-dx).clamp(0, w) as usize;
    let hi = (w - dx).clamp(0, w) as usize;
    if lo < hi {
        let s = (lo as isize + dx) as usize;
        for (d, &v) in dst[s..s + hi - lo].iter_mut().zip(&g[lo..hi]) {
            *d += v;
        }
    }
    for x in (0..lo).chain(hi..w as usize) {
        if let Some(sx) = wrap(x as isize + dx, w as usize, padding) {
            dst[sx] += g[x];
        }
    }
}

/// Patch matrix `[(c * k + ky) * k + kx][position]` for a `k x k` kernel
/// centred on every position.
pub(crate) fn im2col<T: Scalar>(x: &Maps<T>, k: usize, padding: Padding, cols: &mut Vec<T>) {
    let (h, w) = (x.height, x.width);
    let p = x.positions();
    let half = (k / 2) as isize;
    let len = x.channels * k * k * p;
    cols.resize(len, T::zero());
    for c in 0..x.channels {
        let src = x.channel(c);
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((c * k + ky) * k + kx) * p..][..p];
                let dx = kx as isize - half;
                for b in 0..x.batch {
                    for y in 0..h {
                        let d_row = &mut row[(b * h + y) * w..][..w];
                        match wrap(y as isize + ky as isize - half, h, padding) {
                            Some(sy) => shift_row(&src[(b * h + sy) * w..][..w], d_row, dx, padding),
                            None => d_row.fill(T::zero()),
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add patch gradients back onto the maps.
pub(crate) fn col2im<T: Scalar>(cols: &[T], k: usize, padding: Padding, dx: &mut Maps<T>) {
    let (h, w) = (dx.height, dx.width);
    let p = dx.positions();
    let half = (k / 2) as isize;
    let batch = dx.batch;
    for c in 0..dx.channels {
        let dst = dx.channel_mut(c);
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((c * k + ky) * k + kx) * p..][..p];
                let off = kx as isize - half;
                for b in 0..batch {
                    for y in 0..h {
                        let Some(sy) = wrap(y as isize + ky as isize - half, h, padding) else {
                            continue;
                        };
                        shift_add_row(&row[(b * h + y) * w..][..w], &mut dst[(b * h + sy) * w..][..w], off, padding);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<f64> = (0..12).map(|_| rng.gen()).collect();
        let b: Vec<f64> = (0..20).map(|_| rng.gen()).collect();
        // a is 3x4, b is 4x5
        let mut c = vec![1.0; 15];
        gemm(2.0, View::new(&a, 3, 4), View::new(&b, 4, 5), 0.5, &mut c, 5);
        for i in 0..3 {
            for j in 0..5 {
                let s: f64 = (0..4).map(|k| a[i * 4 + k] * b[k * 5 + j]).sum();
                assert!((c[i * 5 + j] - (2.0 * s + 0.5)).abs() < 1e-12);
            }
        }
        // a^T b^T with a stored 4x3 and b stored 5x4
        let mut d = vec![0.0; 15];
        gemm(1.0, View::new(&a, 4, 3).t(), View::new(&b, 5, 4).t(), 0.0, &mut d, 5);
        for i in 0..3 {
            for j in 0..5 {
                let s: f64 = (0..4).map(|k| a[k * 3 + i] * b[j * 4 + k]).sum();
                assert!((d[i * 5 + j] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for padding in [Padding::Circular, Padding::Zero] {
            let mut x = Maps::<f64>::zeros(2, 2, 4, 5);
            x.data.iter_mut().for_each(|v| *v = rng.gen());
            let mut cols = Vec::new();
            im2col(&x, 3, padding, &mut cols);
            let g: Vec<f64> = (0..cols.len()).map(|_| rng.gen()).collect();
            let mut back = Maps::<f64>::zeros(2, 2, 4, 5);
            col2im(&g, 3, padding, &mut back);
            let lhs: f64 = cols.iter().zip(&g).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data.iter().zip(&back.data).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn circular_patch_wraps() {
        let mut x = Maps::<f64>::zeros(1, 1, 3, 3);
        x.data = (0..9).map(f64::from).collect();
        let mut cols = Vec::new();
        im2col(&x, 3, Padding::Circular, &mut cols);
        // top-left tap at position (0, 0) reads (2, 2)
        assert_eq!(cols[0], 8.0);
        im2col(&x, 3, Padding::Zero, &mut cols);
        assert_eq!(cols[0], 0.0);
        // centre tap is the input itself
        assert_eq!(&cols[4 * 9..5 * 9], &x.data[..]);
    }

    #[test]
    fn concat_split_round_trip() {
        let mut a = Maps::<f32>::zeros(2, 1, 2, 2);
        a.data.iter_mut().enumerate().for_each(|(i, v)| *v = i as f32);
        let b = Maps::<f32>::zeros(3, 1, 2, 2);
        let c = a.concat(&b);
        assert_eq!(c.channels, 5);
        let (x, y) = c.split(2);
        assert_eq!(x, a);
        assert_eq!(y, b);
    }
}
