//! Nyström low-rank approximation of a kernel matrix.
//!
//! `K̃ = V A⁻¹ Vᵀ` where `V` holds the kernel columns of a landmark subset and
//! `A` the landmark Gram matrix, factored as `A + jitter·I = L Lᵀ`. Products
//! with `K̃` cost `O(nr)` and never materialize an `n × n` matrix.
//!
//! Landmarks are drawn by approximate ridge leverage scores, and
//! [`adaptive_nystrom`] doubles the rank until the exact entrywise error
//! certificate `maxᵢ |1 − K̃ᵢᵢ|` falls below the requested tolerance. The
//! certificate is exact because `K ⪰ K̃ ⪰ 0` puts the largest entry of
//! `K − K̃` on its diagonal, and `Kᵢᵢ = 1` for the Gaussian kernel. Jitter
//! keeps the ordering (`(A + jI)⁻¹ ⪯ A⁻¹`), so the certificate stays valid
//! when the ladder kicks in.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::KernelFunction;
use crate::linalg::{
    cholesky_shifted, cholesky_with_jitter, solve_lower_in_place,
    Matrix, JITTER_LADDER,
};
use crate::geometry::PointSet;
use crate::operator::LinearOperator;
use crate::scalar::{dot, Scalar};

/// Supports at or below this size get exact leverage scores.
pub const EXACT_LEVERAGE_MAX: usize = 512;
/// Oversampling factor applied to the score mass when picking the
/// recursion's landmark set.
pub const LEVERAGE_OVERSAMPLING: f64 = 16.0;
/// Upper bound on the recursion's landmark set, which sets its `O(n s²)` cost.
pub const LEVERAGE_MAX_LANDMARKS: usize = 192;
const LEVERAGE_MIN_LANDMARKS: usize = 32;

/// `K̃ = V (L Lᵀ)⁻¹ Vᵀ` over a landmark subset of the support.
#[derive(Debug, Clone)]
pub struct NystromFactor<T> {
    landmarks: Vec<usize>,
    v: Matrix<T>,
    l: Matrix<T>,
    jitter: T,
    /// Row `i` is `L⁻¹vᵢ`, so `K̃ᵢⱼ = wᵢ·wⱼ`.
    w: Matrix<T>,
}

impl<T: Scalar> NystromFactor<T> {
    pub fn landmarks(&self) -> &[usize] {
        &self.landmarks
    }

    pub fn rank(&self) -> usize {
        self.landmarks.len()
    }

    /// Support size `n`.
    pub fn len(&self) -> usize {
        self.v.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.v.rows() == 0
    }

    /// `n × r` kernel columns.
    pub fn v(&self) -> &Matrix<T> {
        &self.v
    }

    /// Lower-triangular Cholesky factor of the (jittered) landmark Gram matrix.
    pub fn l(&self) -> &Matrix<T> {
        &self.l
    }

    /// Diagonal shift actually added to the landmark Gram matrix.
    pub fn jitter(&self) -> T {
        self.jitter
    }

    /// `K̃ w = W Wᵀ w` with `W = V L⁻ᵀ`.
    pub fn matvec(&self, w: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.len()];
        self.matvec_into(w, &mut out);
        out
    }

    fn matvec_into(&self, w: &[T], out: &mut [T]) {
        assert_eq!(w.len(), self.len(), "factor matvec: input length");
        let mut z = vec![T::zero(); self.rank()];
        self.w.matvec_transpose(w, &mut z);
        self.w.matvec(&z, out);
    }

    /// `K̃ᵢᵢ = ‖L⁻¹ vᵢ‖²` for every row `vᵢ` of `V`.
    pub fn diagonal(&self) -> Vec<T> {
        self.w.iter_rows().map(|w| dot(w, w)).collect()
    }

    /// `maxᵢ |1 − K̃ᵢᵢ|`, which equals `‖K − K̃‖_∞` for a unit-diagonal kernel.
    /// In exact arithmetic `K̃ᵢᵢ ≤ 1`; the absolute value also catches
    /// roundoff overshoot from an ill-conditioned landmark Gram matrix.
    pub fn error_certificate(&self) -> T {
        self.diagonal()
            .into_iter()
            .fold(T::zero(), |acc, k| acc.max((T::one() - k).abs()))
    }
}

impl<T: Scalar> LinearOperator<T> for NystromFactor<T> {
    fn dim(&self) -> usize {
        self.len()
    }

    fn apply(&self, x: &[T], out: &mut [T]) {
        self.matvec_into(x, out)
    }

    fn apply_transpose(&self, x: &[T], out: &mut [T]) {
        self.matvec_into(x, out)
    }
}

/// `K̃ w`; see [`NystromFactor::matvec`].
pub fn factor_matvec<T: Scalar>(factor: &NystromFactor<T>, w: &[T]) -> Vec<T> {
    factor.matvec(w)
}

/// `diag(K̃)`; see [`NystromFactor::diagonal`].
pub fn factor_diagonal<T: Scalar>(factor: &NystromFactor<T>) -> Vec<T> {
    factor.diagonal()
}

/// Builds `V`, `A` and `L` for the given landmark indices, walking the jitter
/// ladder when `A` is numerically singular.
pub fn build_factor<T: Scalar, K: KernelFunction<T>>(
    points: &PointSet<T>,
    kernel: &K,
    landmarks: &[usize],
) -> Result<NystromFactor<T>> {
    let n = points.len();
    if landmarks.is_empty() {
        return Err(Error::input("at least one landmark is required"));
    }
    let mut seen = vec![false; n];
    for &j in landmarks {
        if j >= n {
            return Err(Error::input(format!("landmark index {j} out of range for {n} points")));
        }
        if std::mem::replace(&mut seen[j], true) {
            return Err(Error::input(format!("landmark index {j} repeated")));
        }
    }
    let r = landmarks.len();
    let v = Matrix::from_fn(n, r, |i, j| kernel.eval(points.point(i), points.point(landmarks[j])));
    let a = Matrix::from_fn(r, r, |i, j| v[(landmarks[i], j)]);
    let (l, jitter) = cholesky_with_jitter(&a)?;
    let rows: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut w = v.row(i).to_vec();
            solve_lower_in_place(&l, &mut w);
            w
        })
        .collect();
    let w = Matrix::from_vec(n, r, rows.into_iter().flatten().collect())?;
    Ok(NystromFactor {
        landmarks: landmarks.to_vec(),
        v,
        l,
        jitter,
        w,
    })
}

/// Ridge leverage scores `ℓᵢ(λ) = (K(K + λnI)⁻¹)ᵢᵢ`, exact for small supports
/// and estimated by recursive half-sampling otherwise.
///
/// The recursive estimate of each score is
/// `min(1, (Kᵢᵢ − k_{iS}(K_{SS} + λnI)⁻¹k_{Si})/(λn) + 1/n)`
/// with `S` drawn from a uniformly chosen half by that half's own scores.
pub fn approximate_ridge_leverage_scores<T: Scalar, K: KernelFunction<T>, R: Rng + ?Sized>(
    points: &PointSet<T>,
    kernel: &K,
    lambda: T,
    rng: &mut R,
) -> Result<Vec<T>> {
    let n = points.len();
    if n == 0 {
        return Err(Error::input("empty support"));
    }
    if !(lambda > T::zero()) || !lambda.is_finite() {
        return Err(Error::input(format!("lambda must be positive, got {lambda}")));
    }
    let ridge = lambda * T::from_count(n);
    let all: Vec<usize> = (0..n).collect();
    recursive_scores(points, &all, kernel, ridge, n, rng)
}

/// Exact ridge leverage scores of the full support.
pub fn exact_ridge_leverage_scores<T: Scalar, K: KernelFunction<T>>(
    points: &PointSet<T>,
    kernel: &K,
    lambda: T,
) -> Result<Vec<T>> {
    let n = points.len();
    if !(lambda > T::zero()) {
        return Err(Error::input(format!("lambda must be positive, got {lambda}")));
    }
    let all: Vec<usize> = (0..n).collect();
    exact_scores(points, &all, kernel, lambda * T::from_count(n))
}

fn recursive_scores<T: Scalar, K: KernelFunction<T>, R: Rng + ?Sized>(
    points: &PointSet<T>,
    idx: &[usize],
    kernel: &K,
    ridge: T,
    n_total: usize,
    rng: &mut R,
) -> Result<Vec<T>> {
    if idx.len() <= EXACT_LEVERAGE_MAX {
        return exact_scores(points, idx, kernel, ridge);
    }
    let half_len = idx.len().div_ceil(2);
    let mut half: Vec<usize> = index::sample(rng, idx.len(), half_len)
        .into_iter()
        .map(|k| idx[k])
        .collect();
    half.sort_unstable();
    let half_scores = recursive_scores(points, &half, kernel, ridge, n_total, rng)?;

    let mass: f64 = half_scores.iter().map(|s| s.to_f64_lossy()).sum();
    let target = (LEVERAGE_OVERSAMPLING * mass).ceil() as usize;
    let s = target.clamp(LEVERAGE_MIN_LANDMARKS, LEVERAGE_MAX_LANDMARKS).min(half.len());
    let picked = sample_landmarks(&half_scores, s, rng)?;
    let landmark_ids: Vec<usize> = picked.iter().map(|&k| half[k]).collect();

    let gram = Matrix::from_fn(s, s, |a, b| {
        kernel.eval(points.point(landmark_ids[a]), points.point(landmark_ids[b]))
    });
    let l = shifted_cholesky_with_jitter(&gram, ridge)?;
    let inv_ridge = T::one() / ridge;
    let floor = T::one() / T::from_count(n_total);
    let scores = idx
        .par_iter()
        .map(|&i| {
            let x = points.point(i);
            let mut w: Vec<T> = landmark_ids
                .iter()
                .map(|&j| kernel.eval(x, points.point(j)))
                .collect();
            solve_lower_in_place(&l, &mut w);
            let residual = (kernel.diagonal(x) - dot(&w, &w)).max(T::zero());
            (residual * inv_ridge + floor).min(T::one())
        })
        .collect();
    Ok(scores)
}

fn exact_scores<T: Scalar, K: KernelFunction<T>>(
    points: &PointSet<T>,
    idx: &[usize],
    kernel: &K,
    ridge: T,
) -> Result<Vec<T>> {
    let m = idx.len();
    let gram = Matrix::from_fn(m, m, |a, b| kernel.eval(points.point(idx[a]), points.point(idx[b])));
    let l = shifted_cholesky_with_jitter(&gram, ridge)?;
    // ℓᵢ = 1 − ridge·((K + ridge·I)⁻¹)ᵢᵢ and ((K + ridge·I)⁻¹)ᵢᵢ = ‖L⁻¹eᵢ‖².
    let floor = T::epsilon() / T::from_count(m);
    let scores = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut x = vec![T::zero(); m];
            x[i] = T::one() / l[(i, i)];
            for k in i + 1..m {
                let s = dot(&l.row(k)[i..k], &x[i..k]);
                x[k] = -s / l[(k, k)];
            }
            let inv_diag = dot(&x[i..], &x[i..]);
            (T::one() - ridge * inv_diag).max(floor)
        })
        .collect();
    Ok(scores)
}

fn shifted_cholesky_with_jitter<T: Scalar>(a: &Matrix<T>, shift: T) -> Result<Matrix<T>> {
    for &j in &JITTER_LADDER {
        if let Some(l) = cholesky_shifted(a, shift + T::c(j)) {
            return Ok(l);
        }
    }
    Err(Error::DegenerateLandmarks {
        max_jitter: JITTER_LADDER[JITTER_LADDER.len() - 1],
    })
}

/// Draws `r` distinct indices with probability proportional to `scores`
/// (successive sampling without replacement). Returned sorted.
pub fn sample_landmarks<T: Scalar, R: Rng + ?Sized>(
    scores: &[T],
    r: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let n = scores.len();
    if r > n {
        return Err(Error::input(format!("cannot sample {r} landmarks from {n} points")));
    }
    if let Some((i, s)) = scores.iter().enumerate().find(|(_, s)| !(**s > T::zero()) || !s.is_finite()) {
        return Err(Error::input(format!("score {i} = {s} is not positive")));
    }
    if r == n {
        return Ok((0..n).collect());
    }
    let mut picked = index::sample_weighted(rng, n, |i| scores[i].to_f64_lossy(), r)
        .map_err(|e| Error::input(format!("weighted sampling failed: {e}")))?
        .into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Rank bounds for [`adaptive_nystrom`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RankLimits {
    /// Largest rank tried; `None` means the support size.
    pub r_max: Option<usize>,
    /// Smallest rank tried; raised by the pipeline's retry loop.
    pub r_floor: usize,
}

/// Output of [`adaptive_nystrom`].
#[derive(Debug, Clone)]
pub struct AdaptiveNystrom<T> {
    pub factor: NystromFactor<T>,
    /// Rank at termination.
    pub rank: usize,
    /// Number of factors built.
    pub rounds: usize,
    /// Final certificate `maxᵢ |1 − K̃ᵢᵢ|`.
    pub err: T,
}

/// Doubles the rank, starting from 2, until `maxᵢ |1 − K̃ᵢᵢ| ≤ tau`.
///
/// Landmarks are resampled each round from ridge leverage scores at
/// `λ = tau`. Fails with [`Error::RankExhausted`] when the certificate is
/// still above `tau` at the rank ceiling.
pub fn adaptive_nystrom<T: Scalar, K: KernelFunction<T>, R: Rng + ?Sized>(
    points: &PointSet<T>,
    kernel: &K,
    tau: T,
    rng: &mut R,
    limits: RankLimits,
) -> Result<AdaptiveNystrom<T>> {
    let n = points.len();
    if n == 0 {
        return Err(Error::input("empty support"));
    }
    if !(tau > T::zero()) {
        return Err(Error::input(format!("tau must be positive, got {tau}")));
    }
    let r_max = limits.r_max.unwrap_or(n).min(n);
    if r_max == 0 {
        return Err(Error::input("r_max must be at least 1"));
    }
    let scores = approximate_ridge_leverage_scores(points, kernel, tau, rng)?;
    let mut r = limits.r_floor.max(2);
    let mut rounds = 0;
    loop {
        let rank = r.min(r_max);
        rounds += 1;
        let landmarks = sample_landmarks(&scores, rank, rng)?;
        let factor = build_factor(points, kernel, &landmarks)?;
        let err = factor.error_certificate();
        log::debug!("nystrom round {rounds}: rank {rank}, certificate {err:e}, jitter {:e}", factor.jitter());
        if err <= tau {
            return Ok(AdaptiveNystrom {
                factor,
                rank,
                rounds,
                err,
            });
        }
        if rank == r_max {
            return Err(Error::RankExhausted {
                rank,
                err: err.to_f64_lossy(),
                tau: tau.to_f64_lossy(),
            });
        }
        r = rank * 2;
    }
}
