//! Low-rank Hankel matrix completion of sub-sampled RF planes.
//!
//! The frames are lifted to the extended Hankel matrix
//! `Z = [H(M_1) ... H(M_N)]`, factorized as `U V^T` with `s` columns, and
//! the factorized nuclear-norm surrogate `(|U|^2 + |V|^2) / 2` is minimized
//! by ADMM subject to `Z = U V^T` and exact agreement with the measured
//! samples. Each iteration performs one projection of the plane estimate
//! and two `s x s` linear solves, one for each factor.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hankel::{self, concat_columns, HankelDims, DEFAULT_RANK_TOL};
use crate::plane::RxXmitPlane;
use crate::sampling::{apply_mask, SamplingMask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankChoice {
    Fixed(usize),
    /// Numerical rank of the zero-filled lift at this relative tolerance.
    Auto(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlohaParams {
    pub d1: usize,
    pub d2: usize,
    pub rank: RankChoice,
    /// ADMM penalty; `None` selects `mu_scale / sigma_1` of the initial lift.
    pub admm_mu: Option<f64>,
    pub mu_scale: f64,
    pub max_iters: usize,
    /// Stop when the relative change of the plane estimate falls below this.
    pub convergence_tol: f64,
}

impl Default for AlohaParams {
    fn default() -> Self {
        AlohaParams {
            d1: 7,
            d2: 7,
            rank: RankChoice::Auto(DEFAULT_RANK_TOL),
            admm_mu: None,
            mu_scale: 10.0,
            max_iters: 50,
            convergence_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlohaReport {
    pub iterations: usize,
    pub rank: usize,
    pub mu: f64,
    /// `(|U|^2 + |V|^2) / 2` after every iteration.
    pub objective: Vec<f64>,
    /// Nuclear norm of the lifted zero-filled frames.
    pub initial_nuclear_norm: f64,
    /// Nuclear norm of the lifted completion.
    pub final_nuclear_norm: f64,
    /// Largest deviation from the measurements on the sampled set.
    pub data_residual: f64,
    pub converged: bool,
    /// Set when `max_iters` ran out before the tolerance was met.
    pub warning: Option<String>,
    pub elapsed_ms: f64,
}

struct Problem {
    dims: HankelDims,
    observed: Vec<DMatrix<f64>>,
    measured: Vec<DMatrix<bool>>,
}

impl Problem {
    fn new(frames: &[(RxXmitPlane, SamplingMask)], d1: usize, d2: usize) -> Result<Self> {
        let (first, _) = frames
            .first()
            .ok_or_else(|| Error::config("completion needs at least one frame"))?;
        let dims = HankelDims::new(first.n1(), first.n2(), d1, d2)?;
        let mut observed = Vec::with_capacity(frames.len());
        let mut measured = Vec::with_capacity(frames.len());
        for (i, (plane, mask)) in frames.iter().enumerate() {
            if plane.shape() != first.shape() {
                return Err(Error::shape(format!("{:?}", first.shape()), format!("{:?}", plane.shape())));
            }
            let masked = apply_mask(plane, mask)?;
            if masked.measured_count() == 0 {
                return Err(Error::NoMeasurements(format!("frame {i} has no measured samples")));
            }
            measured.push(masked.missing().map(|m| !m));
            observed.push(masked.into_values());
        }
        Ok(Problem {
            dims,
            observed,
            measured,
        })
    }

    fn frames(&self) -> usize {
        self.observed.len()
    }

    fn lift(&self, planes: &[DMatrix<f64>]) -> DMatrix<f64> {
        let blocks: Vec<_> = planes.iter().map(|p| hankel::lift(p, self.dims)).collect();
        concat_columns(blocks.iter())
    }

    fn lift_into(&self, planes: &[DMatrix<f64>], out: &mut DMatrix<f64>) {
        let rows = self.dims.rows();
        let cols = self.dims.cols();
        let mut block = DMatrix::zeros(rows, cols);
        for (i, p) in planes.iter().enumerate() {
            hankel::lift_into(p, self.dims, &mut block);
            out.columns_mut(i * cols, cols).copy_from(&block);
        }
    }

    /// Plane estimate from a lifted matrix, projected onto the data.
    fn project(&self, lifted: &DMatrix<f64>, planes: &mut [DMatrix<f64>]) {
        let cols = self.dims.cols();
        for (i, plane) in planes.iter_mut().enumerate() {
            let block = lifted.columns(i * cols, cols).clone_owned();
            let est = hankel::unlift_matrix(&block, self.dims);
            for ((dst, e), (&obs, &m)) in plane
                .iter_mut()
                .zip(est.iter())
                .zip(self.observed[i].iter().zip(self.measured[i].iter()))
            {
                *dst = if m { obs } else { *e };
            }
        }
    }

    fn data_residual(&self, planes: &[DMatrix<f64>]) -> f64 {
        let mut worst = 0.0f64;
        for (i, p) in planes.iter().enumerate() {
            for ((v, &obs), &m) in p.iter().zip(self.observed[i].iter()).zip(self.measured[i].iter()) {
                if m {
                    worst = worst.max((v - obs).abs());
                }
            }
        }
        worst
    }
}

/// Numerical rank of the zero-filled extended lift, clamped to
/// `[1, d1*d2*N - 1]`.
pub fn estimate_rank_for(frames: &[(RxXmitPlane, SamplingMask)], params: &AlohaParams) -> Result<usize> {
    let tol = match params.rank {
        RankChoice::Auto(t) => t,
        RankChoice::Fixed(_) => DEFAULT_RANK_TOL,
    };
    let problem = Problem::new(frames, params.d1, params.d2)?;
    let lifted = problem.lift(&problem.observed);
    let rank = hankel::numerical_rank(&lifted, tol);
    let upper = (params.d1 * params.d2 * frames.len()).saturating_sub(1).max(1);
    Ok(rank.clamp(1, upper))
}

fn nuclear_norm(m: &DMatrix<f64>) -> f64 {
    hankel::singular_values(m).iter().sum()
}

/// Complete the frames jointly. The returned planes carry no missing flags
/// and equal the measurements exactly on the sampled set.
pub fn aloha_complete(
    frames: &[(RxXmitPlane, SamplingMask)],
    params: &AlohaParams,
) -> Result<(Vec<RxXmitPlane>, AlohaReport)> {
    let start = Instant::now();
    let problem = Problem::new(frames, params.d1, params.d2)?;
    let n = problem.frames();
    let q = params.d1 * params.d2 * n;
    let rank = match params.rank {
        RankChoice::Fixed(s) => s,
        RankChoice::Auto(_) => estimate_rank_for(frames, params)?,
    };
    if rank == 0 || rank > q {
        return Err(Error::config(format!("rank {rank} must lie in 1..={q}")));
    }

    let mut planes = problem.observed.clone();
    let initial_lift = problem.lift(&planes);
    let initial_nuclear_norm = nuclear_norm(&initial_lift);

    if problem.measured.iter().all(|m| m.iter().all(|&k| k)) {
        let out = planes
            .into_iter()
            .map(RxXmitPlane::new)
            .collect::<Result<Vec<_>>>()?;
        let report = AlohaReport {
            iterations: 1,
            rank,
            objective: vec![initial_nuclear_norm],
            initial_nuclear_norm,
            final_nuclear_norm: initial_nuclear_norm,
            converged: true,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
            ..AlohaReport::default()
        };
        return Ok((out, report));
    }

    // balanced factors from the truncated SVD of the zero-filled lift
    let svd = initial_lift.clone().svd(true, true);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let u_full = svd.u.as_ref().expect("requested U");
    let vt_full = svd.v_t.as_ref().expect("requested V^T");
    let sigma1 = svd.singular_values[order[0]];
    let rows = problem.dims.rows();
    let mut u = DMatrix::zeros(rows, rank);
    let mut v = DMatrix::zeros(q, rank);
    for (c, &k) in order.iter().take(rank).enumerate() {
        let s = svd.singular_values[k].sqrt();
        u.set_column(c, &(u_full.column(k) * s));
        v.set_column(c, &(vt_full.row(k).transpose() * s));
    }
    drop(svd);

    if sigma1 == 0.0 {
        // all-zero measurements: the zero plane is consistent and minimal
        let out = planes.into_iter().map(RxXmitPlane::new).collect::<Result<Vec<_>>>()?;
        let report = AlohaReport {
            iterations: 1,
            rank,
            converged: true,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
            ..AlohaReport::default()
        };
        return Ok((out, report));
    }

    let mu = params.admm_mu.unwrap_or(params.mu_scale / sigma1);
    if !(mu > 0.0) {
        return Err(Error::config("admm_mu must be positive"));
    }
    let eye = DMatrix::<f64>::identity(rank, rank);
    let mut dual = DMatrix::<f64>::zeros(rows, q);
    let mut lifted = DMatrix::<f64>::zeros(rows, q);
    let mut low_rank = &u * v.transpose();
    let mut objective = Vec::with_capacity(params.max_iters);
    let mut converged = false;
    let mut iterations = 0;
    let mut previous = planes.clone();

    for _ in 0..params.max_iters {
        iterations += 1;
        // M-step: least-squares unlift of U V^T - Lambda, measured samples fixed
        let target = &low_rank - &dual;
        problem.project(&target, &mut planes);
        problem.lift_into(&planes, &mut lifted);

        // factor steps, one s x s solve each
        let shifted = &lifted + &dual;
        let gram_v = &eye + v.tr_mul(&v) * mu;
        u = solve_right(&(&shifted * &v * mu), &gram_v)?;
        let gram_u = &eye + u.tr_mul(&u) * mu;
        v = solve_right(&(shifted.tr_mul(&u) * mu), &gram_u)?;

        low_rank = &u * v.transpose();
        dual += &lifted - &low_rank;
        objective.push(0.5 * (u.norm_squared() + v.norm_squared()));

        let mut diff = 0.0;
        let mut base = 0.0;
        for (p, old) in planes.iter().zip(&previous) {
            diff += (p - old).norm_squared();
            base += old.norm_squared();
        }
        let change = (diff / base.max(f64::MIN_POSITIVE)).sqrt();
        if !change.is_finite() {
            return Err(Error::Numerical("ADMM iterate became non-finite".into()));
        }
        if change < params.convergence_tol {
            converged = true;
            break;
        }
        previous.clone_from(&planes);
    }

    let final_nuclear_norm = nuclear_norm(&problem.lift(&planes));
    let report = AlohaReport {
        iterations,
        rank,
        mu,
        objective,
        initial_nuclear_norm,
        final_nuclear_norm,
        data_residual: problem.data_residual(&planes),
        converged,
        warning: (!converged).then(|| {
            format!(
                "no convergence to {:e} within {} iterations",
                params.convergence_tol, params.max_iters
            )
        }),
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    let out = planes.into_iter().map(RxXmitPlane::new).collect::<Result<Vec<_>>>()?;
    Ok((out, report))
}

/// `X = B G^{-1}` for symmetric positive definite `G`.
fn solve_right(b: &DMatrix<f64>, gram: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("factor Gram matrix not positive definite".into()))?;
    Ok(chol.solve(&b.transpose()).transpose())
}

/// Mean wall-clock milliseconds per ADMM iteration for `frames`, used to
/// check how the cost scales with the number of stacked frames.
pub fn per_iteration_ms(frames: &[(RxXmitPlane, SamplingMask)], params: &AlohaParams) -> Result<f64> {
    let params = AlohaParams {
        convergence_tol: 0.0,
        ..params.clone()
    };
    let (_, report) = aloha_complete(frames, &params)?;
    Ok(report.elapsed_ms / report.iterations.max(1) as f64)
}

/// Reference solver for the convex problem: minimize the nuclear norm of
/// the `d x d` lifted plane subject to agreeing with the measurements.
/// ADMM with a full SVD and singular-value thresholding every step; slow,
/// meant for cross-checking [`aloha_complete`] on small planes.
pub fn svt_complete(observed: &RxXmitPlane, mask: &SamplingMask, d: usize, iters: usize) -> Result<RxXmitPlane> {
    let dims = HankelDims::new(observed.n1(), observed.n2(), d, d)?;
    let masked = apply_mask(observed, mask)?;
    let keep = mask.keep();
    let obs = masked.values().clone();
    let mut m = obs.clone();
    let mut y = DMatrix::zeros(dims.rows(), dims.cols());
    let rho = 1.0;
    for _ in 0..iters {
        let svd = (hankel::lift(&m, dims) + &y).svd(true, true);
        let mut sv = svd.singular_values.clone();
        sv.iter_mut().for_each(|s| *s = (*s - 1.0 / rho).max(0.0));
        let (Some(u), Some(v_t)) = (svd.u.as_ref(), svd.v_t.as_ref()) else {
            return Err(Error::Numerical("SVD did not return singular vectors".into()));
        };
        let z = u * DMatrix::from_diagonal(&sv) * v_t;
        let est = hankel::unlift_matrix(&(&z - &y), dims);
        m = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| if keep[(i, j)] { obs[(i, j)] } else { est[(i, j)] });
        y += hankel::lift(&m, dims) - z;
    }
    RxXmitPlane::new(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::MaskKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn cos_plane(n: usize, period: f64) -> RxXmitPlane {
        RxXmitPlane::from_fn(n, n, |x, y| (2.0 * PI * (x + y) as f64 / period).cos())
    }

    fn random_mask(n1: usize, n2: usize, frac: f64, seed: u64) -> SamplingMask {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = DMatrix::from_fn(n1, n2, |_, _| rng.gen_bool(frac));
        SamplingMask::from_keep(MaskKind::RxRandom, keep, 1, 1, seed)
    }

    fn rel_err(a: &RxXmitPlane, b: &RxXmitPlane) -> f64 {
        (a.values() - b.values()).norm() / b.values().norm()
    }

    #[test]
    fn fully_sampled_is_returned_unchanged() {
        let p = cos_plane(8, 5.0);
        let frames = vec![(p.clone(), SamplingMask::full(8, 8))];
        let params = AlohaParams {
            d1: 3,
            d2: 3,
            rank: RankChoice::Fixed(2),
            ..AlohaParams::default()
        };
        let (out, report) = aloha_complete(&frames, &params).unwrap();
        assert_eq!(out[0], p);
        assert_eq!(report.iterations, 1);
    }

    #[test]
    fn recovers_rank_two_plane_from_sixty_percent() {
        let truth = cos_plane(16, 8.0);
        let mask = random_mask(16, 16, 0.6, 42);
        let params = AlohaParams {
            rank: RankChoice::Fixed(2),
            max_iters: 200,
            convergence_tol: 1e-10,
            ..AlohaParams::default()
        };
        let (out, report) = aloha_complete(&[(truth.clone(), mask.clone())], &params).unwrap();
        let err = rel_err(&out[0], &truth);
        assert!(err < 1e-3, "relative error {err} after {} iterations", report.iterations);
        assert_eq!(report.data_residual, 0.0);
        assert!(report.final_nuclear_norm <= report.initial_nuclear_norm);
        for r in 0..16 {
            for c in 0..16 {
                if mask.is_kept(r, c) {
                    assert_eq!(out[0].values()[(r, c)], truth.values()[(r, c)]);
                }
            }
        }
    }

    #[test]
    fn agrees_with_nuclear_norm_oracle() {
        for (seed, rank) in [(1u64, 3usize), (2, 4), (3, 5)] {
            let truth = RxXmitPlane::from_fn(8, 8, |x, y| {
                (2.0 * PI * (x as f64 + 2.0 * y as f64) / 8.0).cos() + 0.5
            });
            let mask = random_mask(8, 8, 0.7, seed);
            let oracle = svt_complete(&truth, &mask, 3, 4000).unwrap();
            let params = AlohaParams {
                d1: 3,
                d2: 3,
                rank: RankChoice::Fixed(rank),
                max_iters: 2000,
                convergence_tol: 1e-12,
                ..AlohaParams::default()
            };
            let (out, _) = aloha_complete(&[(truth.clone(), mask)], &params).unwrap();
            let err = rel_err(&out[0], &oracle);
            assert!(err < 1e-3, "seed {seed}: disagreement {err}");
        }
    }

    #[test]
    fn complementary_masks_on_duplicated_frames() {
        let truth = cos_plane(16, 8.0);
        let a = random_mask(16, 16, 0.5, 9);
        let b = SamplingMask::from_keep(MaskKind::RxRandom, a.keep().map(|k| !k), 1, 1, 10);
        let single = hankel::block_hankel(&truth, 7, 7).unwrap().numerical_rank(1e-8);
        let ext = hankel::ExtendedHankel::new(&[truth.clone(), truth.clone()], 7, 7).unwrap();
        assert_eq!(ext.numerical_rank(1e-8), single);
        let params = AlohaParams {
            rank: RankChoice::Fixed(single),
            max_iters: 500,
            convergence_tol: 1e-12,
            ..AlohaParams::default()
        };
        let (out, _) = aloha_complete(&[(truth.clone(), a), (truth.clone(), b)], &params).unwrap();
        for o in &out {
            assert!(rel_err(o, &truth) < 1e-6, "{}", rel_err(o, &truth));
        }
    }

    #[test]
    fn rank_estimates() {
        let truth = cos_plane(16, 8.0);
        let full = SamplingMask::full(16, 16);
        let params = AlohaParams::default();
        assert_eq!(estimate_rank_for(&[(truth.clone(), full.clone())], &params).unwrap(), 2);
        let two = [(truth.clone(), full.clone()), (truth.clone(), full.clone())];
        assert_eq!(estimate_rank_for(&two, &params).unwrap(), 2);
        let zero = RxXmitPlane::zeros(16, 16);
        assert_eq!(estimate_rank_for(&[(zero, full)], &params).unwrap(), 1);
    }

    #[test]
    fn invalid_inputs() {
        let p = cos_plane(8, 8.0);
        let params = AlohaParams {
            d1: 3,
            d2: 3,
            rank: RankChoice::Fixed(10),
            ..AlohaParams::default()
        };
        let mask = random_mask(8, 8, 0.5, 1);
        assert!(aloha_complete(&[(p.clone(), mask.clone())], &params).is_err());
        let none = SamplingMask::from_keep(MaskKind::RxRandom, DMatrix::from_element(8, 8, false), 1, 1, 0);
        assert!(matches!(
            aloha_complete(&[(p, none)], &AlohaParams { rank: RankChoice::Fixed(2), ..params }),
            Err(Error::NoMeasurements(_))
        ));
    }

    #[test]
    fn iteration_budget_exhaustion_is_flagged() {
        let truth = cos_plane(16, 8.0);
        let params = AlohaParams {
            rank: RankChoice::Fixed(2),
            max_iters: 2,
            convergence_tol: 1e-14,
            ..AlohaParams::default()
        };
        let (out, report) = aloha_complete(&[(truth, random_mask(16, 16, 0.6, 4))], &params).unwrap();
        assert_eq!(report.iterations, 2);
        assert!(!report.converged && report.warning.is_some());
        assert_eq!(report.objective.len(), 2);
        assert_eq!(report.data_residual, 0.0);
        assert!(!out[0].has_missing());
    }
}
