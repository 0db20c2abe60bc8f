//! Matrix-free Sinkhorn scaling against a positive operator.
//!
//! Scalings live in the log domain (`D₁ = diag(eᵘ)`, `D₂ = diag(eᵛ)`) and are
//! applied through the operator's matvec. Inputs to each product are shifted
//! by their maximum so the exponentials stay in `(0, 1]`.

use std::ops::ControlFlow;

use crate::error::{Error, Result};
use crate::geometry::check_simplex;
use crate::operator::LinearOperator;
use crate::scalar::{l1_distance, max_entry, Scalar};

/// Log-diagonals `u = log diag D₁`, `v = log diag D₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingPair<T> {
    pub u: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> ScalingPair<T> {
    /// `u = v = 0`.
    pub fn zeros(n: usize) -> Self {
        Self {
            u: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}

/// Tuning for [`sinkhorn_scale`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornOptions<T> {
    /// Target accuracy `δ ∈ (0, 1]`; the loop stops at violation `≤ δ/2`.
    pub delta: T,
    /// Regularization `η`, used only to scale `Ŵ`.
    pub eta: T,
    pub max_iters: usize,
}

impl<T: Scalar> SinkhornOptions<T> {
    pub fn new(delta: T, eta: T, max_iters: usize) -> Self {
        Self {
            delta,
            eta,
            max_iters,
        }
    }
}

/// `128·⌈δ⁻¹(4ηR² + log(8n/δ))⌉`, a generous multiple of the iteration
/// bound when every operator entry is at least `e^{−4ηR²}/2`.
pub fn default_max_iters(delta: f64, eta: f64, radius: f64, n: usize) -> usize {
    let bound = (4.0 * eta * radius * radius + (8.0 * n.max(1) as f64 / delta).ln()) / delta;
    let iters = 128.0 * bound.ceil();
    if iters.is_finite() && iters < usize::MAX as f64 {
        iters as usize
    } else {
        usize::MAX
    }
}

/// Snapshot handed to a progress observer after each renormalization.
#[derive(Debug, Clone, Copy)]
pub struct SinkhornProgress<T> {
    pub iteration: usize,
    /// Violation against the smoothed marginals.
    pub violation: T,
    /// Current cost estimate `Ŵ`.
    pub w_hat: T,
}

#[derive(Debug, Clone)]
pub struct SinkhornResult<T> {
    pub scalings: ScalingPair<T>,
    /// Cost estimate `Ŵ = η⁻¹(Σ uᵢ rᵢ + Σ vⱼ cⱼ)`.
    pub w_hat: T,
    /// Number of renormalizations performed.
    pub iterations: usize,
    /// `‖P̃1 − p′‖₁ + ‖P̃ᵀ1 − q′‖₁` at exit.
    pub final_violation: T,
    /// `P̃1` at exit.
    pub row_marginals: Vec<T>,
    /// `P̃ᵀ1` at exit.
    pub col_marginals: Vec<T>,
    /// True when an observer ended the run before the tolerance was met.
    pub stopped_early: bool,
}

/// `(1 − δ/8)w + (δ/8n)1`.
pub fn smoothed_marginal<T: Scalar>(w: &[T], delta: T) -> Vec<T> {
    let tau = delta / T::c(8.0);
    let floor = tau / T::from_count(w.len());
    w.iter().map(|&x| (T::one() - tau) * x + floor).collect()
}

/// Runs Sinkhorn scaling on `op` toward `p`, `q` until the violation against
/// the smoothed marginals drops to `δ/2`.
pub fn sinkhorn_scale<T: Scalar, O: LinearOperator<T> + ?Sized>(
    op: &O,
    p: &[T],
    q: &[T],
    options: SinkhornOptions<T>,
) -> Result<SinkhornResult<T>> {
    sinkhorn_scale_observed(op, p, q, options, |_| ControlFlow::Continue(()))
}

/// [`sinkhorn_scale`] with a callback after every renormalization. Returning
/// `ControlFlow::Break` ends the run with `stopped_early` set.
pub fn sinkhorn_scale_observed<T, O, F>(
    op: &O,
    p: &[T],
    q: &[T],
    options: SinkhornOptions<T>,
    mut observer: F,
) -> Result<SinkhornResult<T>>
where
    T: Scalar,
    O: LinearOperator<T> + ?Sized,
    F: FnMut(&SinkhornProgress<T>) -> ControlFlow<()>,
{
    let n = op.dim();
    if p.len() != n || q.len() != n {
        return Err(Error::input(format!(
            "marginal lengths ({}, {}) do not match operator dimension {n}",
            p.len(),
            q.len()
        )));
    }
    check_simplex(p, "p")?;
    check_simplex(q, "q")?;
    let delta = options.delta;
    if !(delta > T::zero() && delta <= T::one()) {
        return Err(Error::input(format!("delta must lie in (0, 1], got {delta}")));
    }
    if !(options.eta > T::zero()) {
        return Err(Error::input(format!("eta must be positive, got {}", options.eta)));
    }

    let p_s = smoothed_marginal(p, delta);
    let q_s = smoothed_marginal(q, delta);
    let log_p: Vec<T> = p_s.iter().map(|x| x.ln()).collect();
    let log_q: Vec<T> = q_s.iter().map(|x| x.ln()).collect();
    let stop = delta / T::c(2.0);

    let mut s = ScalingPair::zeros(n);
    // log(K eᵛ) and log(Kᵀ eᵘ); each renormalization refreshes one of them.
    let mut log_kv = log_apply(op, &s.v, false, 0)?;
    let mut log_ku = log_apply(op, &s.u, true, 0)?;
    let mut rows = exp_sum(&s.u, &log_kv);
    let mut cols = exp_sum(&s.v, &log_ku);
    let mut iterations = 0;
    loop {
        let violation = l1_distance(&rows, &p_s) + l1_distance(&cols, &q_s);
        let finish = |s: ScalingPair<T>, rows: Vec<T>, cols: Vec<T>, stopped_early| {
            let w_hat = scaling_cost(&s, &rows, &cols, options.eta);
            SinkhornResult {
                scalings: s,
                w_hat,
                iterations,
                final_violation: violation,
                row_marginals: rows,
                col_marginals: cols,
                stopped_early,
            }
        };
        if violation <= stop {
            return Ok(finish(s, rows, cols, false));
        }
        if iterations > 0 {
            let progress = SinkhornProgress {
                iteration: iterations,
                violation,
                w_hat: scaling_cost(&s, &rows, &cols, options.eta),
            };
            if observer(&progress).is_break() {
                return Ok(finish(s, rows, cols, true));
            }
        }
        if iterations >= options.max_iters {
            return Err(Error::NoConvergence {
                iterations,
                violation: violation.to_f64_lossy(),
            });
        }
        iterations += 1;
        if iterations % 2 == 1 {
            for ((u, &lp), &lk) in s.u.iter_mut().zip(&log_p).zip(&log_kv) {
                *u = lp - lk;
            }
            log_ku = log_apply(op, &s.u, true, iterations)?;
        } else {
            for ((v, &lq), &lk) in s.v.iter_mut().zip(&log_q).zip(&log_ku) {
                *v = lq - lk;
            }
            log_kv = log_apply(op, &s.v, false, iterations)?;
        }
        rows = exp_sum(&s.u, &log_kv);
        cols = exp_sum(&s.v, &log_ku);
    }
}

/// `log(A eˣ)` (or `log(Aᵀ eˣ)`), shifting `x` by its maximum first.
fn log_apply<T: Scalar, O: LinearOperator<T> + ?Sized>(
    op: &O,
    log_x: &[T],
    transpose: bool,
    iteration: usize,
) -> Result<Vec<T>> {
    let shift = max_entry(log_x);
    if !shift.is_finite() {
        return Err(Error::NonpositiveOperator { iteration, index: 0 });
    }
    let x: Vec<T> = log_x.iter().map(|&l| (l - shift).exp()).collect();
    let mut y = vec![T::zero(); x.len()];
    if transpose {
        op.apply_transpose(&x, &mut y);
    } else {
        op.apply(&x, &mut y);
    }
    let guard = T::c(1e300).min(T::max_value());
    let mut out = Vec::with_capacity(y.len());
    for (index, &yi) in y.iter().enumerate() {
        if !(yi > T::zero()) || !(yi < guard) {
            return Err(Error::NonpositiveOperator { iteration, index });
        }
        out.push(yi.ln() + shift);
    }
    Ok(out)
}

fn exp_sum<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| (x + y).exp()).collect()
}

/// `‖P̃1 − p‖₁ + ‖P̃ᵀ1 − q‖₁` for `P̃ = D₁ A D₂`, using two matvecs.
pub fn marginal_violation<T: Scalar, O: LinearOperator<T> + ?Sized>(
    op: &O,
    scalings: &ScalingPair<T>,
    p_target: &[T],
    q_target: &[T],
) -> T {
    let (rows, cols) = scaled_marginals(op, scalings);
    l1_distance(&rows, p_target) + l1_distance(&cols, q_target)
}

/// `(P̃1, P̃ᵀ1)` for `P̃ = D₁ A D₂`.
pub fn scaled_marginals<T: Scalar, O: LinearOperator<T> + ?Sized>(
    op: &O,
    scalings: &ScalingPair<T>,
) -> (Vec<T>, Vec<T>) {
    let side = |outer: &[T], inner: &[T], transpose: bool| {
        let shift = max_entry(inner);
        let shift = if shift.is_finite() { shift } else { T::zero() };
        let x: Vec<T> = inner.iter().map(|&l| (l - shift).exp()).collect();
        let y = if transpose {
            op.apply_transpose_vec(&x)
        } else {
            op.apply_vec(&x)
        };
        outer
            .iter()
            .zip(&y)
            .map(|(&o, &yi)| if yi == T::zero() { T::zero() } else { (o + shift).exp() * yi })
            .collect::<Vec<T>>()
    };
    (
        side(&scalings.u, &scalings.v, false),
        side(&scalings.v, &scalings.u, true),
    )
}

/// `Ŵ = η⁻¹(Σᵢ uᵢ rᵢ + Σⱼ vⱼ cⱼ)` given the marginals of `P̃`.
///
/// This equals `⟨C̃, P̃⟩ − η⁻¹H(P̃)` for `C̃ = −η⁻¹ log A`. Entries whose
/// marginal is zero contribute nothing even when their log-scaling is `-inf`.
pub fn scaling_cost<T: Scalar>(scalings: &ScalingPair<T>, rows: &[T], cols: &[T], eta: T) -> T {
    let term = |logs: &[T], marg: &[T]| {
        logs.iter()
            .zip(marg)
            .filter(|(_, &m)| m != T::zero())
            .fold(T::zero(), |acc, (&l, &m)| acc + l * m)
    };
    (term(&scalings.u, rows) + term(&scalings.v, cols)) / eta
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::operator::{densify, ScaledOperator};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_positive(n: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
        Matrix::from_vec(n, n, (0..n * n).map(|_| rng.gen_range(0.05..1.0)).collect()).unwrap()
    }

    fn random_simplex(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    }

    /// Independent oracle: `⟨C̃, P⟩ − η⁻¹H(P)` with `C̃ = −η⁻¹ log K` on dense matrices.
    fn dense_objective(k: &Matrix<f64>, p: &Matrix<f64>, eta: f64) -> f64 {
        let mut total = 0.0;
        for i in 0..k.rows() {
            for j in 0..k.cols() {
                let x = p[(i, j)];
                if x > 0.0 {
                    total += -x * k[(i, j)].ln() / eta + x * x.ln() / eta;
                }
            }
        }
        total
    }

    /// Independent oracle: plain alternating renormalization on a dense matrix.
    fn dense_projection(k: &Matrix<f64>, p: &[f64], q: &[f64], iters: usize) -> Matrix<f64> {
        let n = k.rows();
        let mut a = vec![1.0; n];
        let mut b = vec![1.0; n];
        for _ in 0..iters {
            for i in 0..n {
                a[i] = p[i] / (0..n).map(|j| k[(i, j)] * b[j]).sum::<f64>();
            }
            for j in 0..n {
                b[j] = q[j] / (0..n).map(|i| k[(i, j)] * a[i]).sum::<f64>();
            }
        }
        Matrix::from_fn(n, n, |i, j| a[i] * k[(i, j)] * b[j])
    }

    fn options(delta: f64, eta: f64) -> SinkhornOptions<f64> {
        SinkhornOptions::new(delta, eta, 1_000_000)
    }

    #[test]
    fn all_ones_two_by_two() {
        let k = Matrix::from_fn(2, 2, |_, _| 1.0);
        let res = sinkhorn_scale(&k, &[0.5, 0.5], &[0.5, 0.5], options(0.1, 1.0)).unwrap();
        assert!(res.iterations <= 2);
        assert!(res.final_violation < 1e-15);
        let p = densify(&ScaledOperator::new(&k, res.scalings.u.clone(), res.scalings.v.clone()));
        assert!(p.as_slice().iter().all(|&x| (x - 0.25).abs() < 1e-15));
        assert!((res.w_hat + 4f64.ln()).abs() < 1e-14);
        assert!((res.w_hat - dense_objective(&k, &p, 1.0)).abs() < 1e-14);
    }

    #[test]
    fn fixed_point_needs_no_iterations() {
        let delta = 0.08;
        let p_s = smoothed_marginal(&[0.5, 0.5], delta);
        assert_eq!(p_s, vec![0.5, 0.5]);
        let k = Matrix::from_fn(2, 2, |_, _| 0.25);
        let res = sinkhorn_scale(&k, &[0.5, 0.5], &[0.5, 0.5], options(delta, 1.0)).unwrap();
        assert_eq!(res.iterations, 0);
        assert_eq!(res.scalings, ScalingPair::zeros(2));
        assert_eq!(res.w_hat, 0.0);
    }

    #[test]
    fn random_eight_by_eight_matches_dense_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let k = random_positive(8, &mut rng);
            let p = random_simplex(8, &mut rng);
            let q = random_simplex(8, &mut rng);
            let delta = 1e-9;
            let res = sinkhorn_scale(&k, &p, &q, options(delta, 1.0)).unwrap();
            let scaled = densify(&ScaledOperator::new(&k, res.scalings.u.clone(), res.scalings.v.clone()));
            let oracle = dense_projection(&k, &p, &q, 5000);
            assert!(scaled.sub(&oracle).l1_norm() < 1e-6);
        }
    }

    #[test]
    fn w_hat_matches_dense_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for case in 0..20 {
            let k = random_positive(10, &mut rng);
            let p = random_simplex(10, &mut rng);
            let q = random_simplex(10, &mut rng);
            let eta = 0.5 + case as f64;
            let res = sinkhorn_scale(&k, &p, &q, options(0.01, eta)).unwrap();
            let plan = densify(&ScaledOperator::new(&k, res.scalings.u.clone(), res.scalings.v.clone()));
            assert!((res.w_hat - dense_objective(&k, &plan, eta)).abs() < 1e-10);
        }
    }

    #[test]
    fn violation_matches_dense_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let k = random_positive(6, &mut rng);
        let s = ScalingPair {
            u: (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            v: (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        };
        let p = random_simplex(6, &mut rng);
        let q = random_simplex(6, &mut rng);
        let dense = densify(&ScaledOperator::new(&k, s.u.clone(), s.v.clone()));
        let want = l1_distance(&dense.row_sums(), &p) + l1_distance(&dense.col_sums(), &q);
        assert!((marginal_violation(&k, &s, &p, &q) - want).abs() < 1e-12);
        assert_eq!(scaling_cost(&ScalingPair::zeros(6), &p, &q, 1.0), 0.0);
    }

    #[test]
    fn zero_operator_is_reported() {
        let k = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let err = sinkhorn_scale(&k, &[0.5, 0.5], &[0.5, 0.5], options(0.1, 1.0)).unwrap_err();
        assert!(matches!(err, Error::NonpositiveOperator { iteration: 0, index: 1 }));
    }

    #[test]
    fn iteration_cap_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let k = random_positive(5, &mut rng);
        let p = random_simplex(5, &mut rng);
        let q = random_simplex(5, &mut rng);
        let err = sinkhorn_scale(&k, &p, &q, SinkhornOptions::new(1e-10, 1.0, 1)).unwrap_err();
        assert!(matches!(err, Error::NoConvergence { iterations: 1, .. }));
    }

    #[test]
    fn observer_can_stop_the_run() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let k = random_positive(5, &mut rng);
        let p = random_simplex(5, &mut rng);
        let q = random_simplex(5, &mut rng);
        let mut seen = 0;
        let res = sinkhorn_scale_observed(&k, &p, &q, options(1e-12, 1.0), |prog| {
            seen = prog.iteration;
            if prog.iteration == 3 {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        })
        .unwrap();
        assert!(res.stopped_early);
        assert_eq!((res.iterations, seen), (3, 3));
    }

    #[test]
    fn bad_arguments() {
        let k = Matrix::from_fn(2, 2, |_, _| 1.0);
        assert!(sinkhorn_scale(&k, &[1.0], &[0.5, 0.5], options(0.1, 1.0)).is_err());
        assert!(sinkhorn_scale(&k, &[0.5, 0.5], &[0.5, 0.5], options(0.0, 1.0)).is_err());
        assert!(sinkhorn_scale(&k, &[0.5, 0.5], &[0.5, 0.5], options(1.5, 1.0)).is_err());
        assert!(sinkhorn_scale(&k, &[0.7, 0.5], &[0.5, 0.5], options(0.1, 1.0)).is_err());
    }

    #[test]
    fn default_cap_grows_with_precision() {
        assert!(default_max_iters(1e-3, 1.0, 1.0, 100) > default_max_iters(1e-2, 1.0, 1.0, 100));
        assert_eq!(default_max_iters(1.0, 0.0, 0.0, 1), 128 * 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn row_renormalization_is_exact(seed in any::<u64>(), n in 2usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = random_positive(n, &mut rng);
            let p = random_simplex(n, &mut rng);
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let log_kv = log_apply(&k, &v, false, 0).unwrap();
            let u: Vec<f64> = p.iter().zip(&log_kv).map(|(x, l)| x.ln() - l).collect();
            let (rows, _) = scaled_marginals(&k, &ScalingPair { u, v });
            prop_assert!(l1_distance(&rows, &p) < 1e-13);
        }

        #[test]
        fn success_meets_tolerance_and_iteration_guard(seed in any::<u64>(), n in 2usize..10, e in 1u32..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = random_positive(n, &mut rng);
            let p = random_simplex(n, &mut rng);
            let q = random_simplex(n, &mut rng);
            let delta = 10f64.powi(-(e as i32));
            let res = sinkhorn_scale(&k, &p, &q, options(delta, 1.0)).unwrap();
            prop_assert!(res.final_violation <= delta / 2.0);
            let p_s = smoothed_marginal(&p, delta);
            let q_s = smoothed_marginal(&q, delta);
            let recomputed = marginal_violation(&k, &res.scalings, &p_s, &q_s);
            prop_assert!((recomputed - res.final_violation).abs() < 1e-12);
            let k_min = k.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
            let bound = 64.0 / delta * (n as f64 / (delta * k_min)).ln();
            prop_assert!((res.iterations as f64) <= bound);
            let plan = densify(&ScaledOperator::new(&k, res.scalings.u.clone(), res.scalings.v.clone()));
            prop_assert!((res.w_hat - dense_objective(&k, &plan, 1.0)).abs() < 1e-10);
        }
    }
}
