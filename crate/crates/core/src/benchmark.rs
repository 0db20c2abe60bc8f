//! Synthetic instances and time-to-accuracy measurements comparing the
//! factored solver with Sinkhorn on the exact kernel.

use std::ops::ControlFlow;
use std::time::Instant;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{merge_supports, PointSet, ProblemInstance, WeightedCloud};
use crate::kernel::{dense_kernel, GaussianKernel};
use crate::nystrom::{adaptive_nystrom, approximate_ridge_leverage_scores, build_factor, sample_landmarks, RankLimits};
use crate::operator::LinearOperator;
use crate::pipeline::{compute_eps_prime, nystrom_tolerance};
use crate::scalar::Scalar;
use crate::sinkhorn::{sinkhorn_scale_observed, SinkhornOptions};

/// Sinkhorn precision used while chasing an accuracy target; the observer
/// normally stops the run long before this is met.
pub const CHASE_DELTA: f64 = 1e-12;
/// Iteration ceiling while chasing an accuracy target.
pub const CHASE_MAX_ITERS: usize = 1_000_000;

/// Two clouds of `n/2` and `n − n/2` points drawn uniformly from `[0, 1]^d`.
/// With `random_weights` the weights are uniform draws from `[0.1, 1)`,
/// normalized; otherwise each cloud is uniformly weighted.
pub fn uniform_cube_instance<T: Scalar, R: Rng + ?Sized>(
    n: usize,
    d: usize,
    eta: T,
    eps: T,
    random_weights: bool,
    rng: &mut R,
) -> Result<ProblemInstance<T>> {
    if n < 2 || d == 0 {
        return Err(Error::input(format!("need n ≥ 2 and d ≥ 1, got n = {n}, d = {d}")));
    }
    let mut cloud = |m: usize| -> Result<WeightedCloud<T>> {
        let pts = PointSet::new(d, (0..m * d).map(|_| T::c(rng.gen::<f64>())).collect())?;
        if !random_weights {
            return WeightedCloud::uniform(pts);
        }
        let w: Vec<f64> = (0..m).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = w.iter().sum();
        WeightedCloud::new(pts, w.into_iter().map(|x| T::c(x / total)).collect())
    };
    let a = cloud(n / 2)?;
    let b = cloud(n - n / 2)?;
    merge_supports(&a, &b, eta, eps)
}

/// `n` points at uniform random parameters `t ∈ [0, 1]` on the helix
/// `(cos 2πt / 2, sin 2πt / 2, t)`, placed in `R^d` (`d ≥ 3`) by a random
/// orthonormal 3-frame drawn from `rng` first. The embedding is an isometry,
/// so the curve is the same for every `d`.
pub fn curve_points<T: Scalar, R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Result<PointSet<T>> {
    if d < 3 {
        return Err(Error::input(format!("curve needs d ≥ 3, got {d}")));
    }
    let mut frame: Vec<Vec<f64>> = Vec::with_capacity(3);
    while frame.len() < 3 {
        let mut e: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for f in &frame {
            let c: f64 = e.iter().zip(f).map(|(a, b)| a * b).sum();
            e.iter_mut().zip(f).for_each(|(a, b)| *a -= c * b);
        }
        let norm = e.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-3 {
            e.iter_mut().for_each(|a| *a /= norm);
            frame.push(e);
        }
    }
    let mut coords = Vec::with_capacity(n * d);
    for _ in 0..n {
        let t: f64 = rng.gen();
        let angle = 2.0 * std::f64::consts::PI * t;
        let local = [0.5 * angle.cos(), 0.5 * angle.sin(), t];
        coords.extend((0..d).map(|k| T::c((0..3).map(|j| local[j] * frame[j][k]).sum())));
    }
    PointSet::new(d, coords)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    DenseSinkhorn,
    NysSink,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::DenseSinkhorn => "dense_sinkhorn",
            Method::NysSink => "nys_sink",
        }
    }
}

/// Landmark selection for [`time_to_accuracy`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankChoice {
    /// Certified rank from the solver's accuracy schedule.
    Adaptive,
    /// A fixed number of leverage-sampled landmarks.
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimedRun {
    pub method: Method,
    /// Wall-clock time from kernel construction to the stopping iteration.
    pub elapsed_ms: f64,
    pub w_hat: f64,
    pub abs_error: f64,
    pub iterations: usize,
    /// Kernel rank (the support size for the exact kernel).
    pub rank: usize,
    /// Whether `abs_error ≤ target` was reached.
    pub reached: bool,
}

/// Builds the kernel for `method` and runs Sinkhorn until the running cost
/// estimate is within `target` of `reference`, timing the whole thing.
///
/// `landmark_lambda` is the ridge level for leverage sampling with a fixed
/// rank; `None` uses the solver's entrywise tolerance.
pub fn time_to_accuracy<T: Scalar, R: Rng + ?Sized>(
    instance: &ProblemInstance<T>,
    method: Method,
    rank: RankChoice,
    reference: f64,
    target: f64,
    dense_cap: usize,
    rng: &mut R,
) -> Result<TimedRun> {
    let start = Instant::now();
    let eta = instance.eta();
    let kernel = GaussianKernel::new(eta)?;
    let n = instance.len();
    let eps_prime = compute_eps_prime(instance.eps(), eta, n.max(2), instance.radius());
    let tau = nystrom_tolerance(eps_prime, eta, instance.radius());
    match method {
        Method::DenseSinkhorn => {
            let k = dense_kernel(instance.support(), &kernel, dense_cap)?;
            chase(&k, instance, start, method, n, reference, target)
        }
        Method::NysSink => {
            let factor = match rank {
                RankChoice::Adaptive => {
                    adaptive_nystrom(instance.support(), &kernel, tau, rng, RankLimits::default())?.factor
                }
                RankChoice::Fixed(r) => {
                    let r = r.clamp(1, n);
                    let scores = approximate_ridge_leverage_scores(instance.support(), &kernel, tau, rng)?;
                    let landmarks = sample_landmarks(&scores, r, rng)?;
                    build_factor(instance.support(), &kernel, &landmarks)?
                }
            };
            let r = factor.rank();
            chase(&factor, instance, start, method, r, reference, target)
        }
    }
}

fn chase<T: Scalar, O: LinearOperator<T>>(
    op: &O,
    instance: &ProblemInstance<T>,
    start: Instant,
    method: Method,
    rank: usize,
    reference: f64,
    target: f64,
) -> Result<TimedRun> {
    let options = SinkhornOptions::new(T::c(CHASE_DELTA), instance.eta(), CHASE_MAX_ITERS);
    let res = sinkhorn_scale_observed(op, instance.p(), instance.q(), options, |prog| {
        if (prog.w_hat.to_f64_lossy() - reference).abs() <= target {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    });
    let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    let res = match res {
        Ok(res) => res,
        Err(Error::NoConvergence { .. }) => {
            return Ok(TimedRun {
                method,
                elapsed_ms,
                w_hat: f64::NAN,
                abs_error: f64::INFINITY,
                iterations: CHASE_MAX_ITERS,
                rank,
                reached: false,
            })
        }
        Err(e) => return Err(e),
    };
    let w_hat = res.w_hat.to_f64_lossy();
    let abs_error = (w_hat - reference).abs();
    Ok(TimedRun {
        method,
        elapsed_ms,
        w_hat,
        abs_error,
        iterations: res.iterations,
        rank,
        reached: abs_error <= target,
    })
}

/// Median of a nonempty sample; NaN for an empty one.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::reference_w_eta;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn instance_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inst = uniform_cube_instance::<f64, _>(7, 3, 2.0, 0.1, true, &mut rng).unwrap();
        assert_eq!((inst.len(), inst.dim()), (7, 3));
        assert!(inst.p()[3..].iter().all(|&x| x == 0.0));
        assert!(inst.q()[..3].iter().all(|&x| x == 0.0));
        assert!(inst.radius() <= 3f64.sqrt());
        assert!(uniform_cube_instance::<f64, _>(1, 3, 2.0, 0.1, true, &mut rng).is_err());
    }

    #[test]
    fn both_methods_reach_a_loose_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inst = uniform_cube_instance::<f64, _>(120, 2, 2.0, 0.1, false, &mut rng).unwrap();
        let (w, _) = reference_w_eta(&inst, 1e-10).unwrap();
        for (method, rank) in [
            (Method::DenseSinkhorn, RankChoice::Adaptive),
            (Method::NysSink, RankChoice::Adaptive),
            (Method::NysSink, RankChoice::Fixed(60)),
        ] {
            let run = time_to_accuracy(&inst, method, rank, w, 1e-3, 1000, &mut rng).unwrap();
            assert!(run.reached, "{method:?} {rank:?}: {run:?}");
            assert!(run.abs_error <= 1e-3);
        }
    }

    #[test]
    fn curve_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = curve_points::<f64, _>(10, 6, &mut rng).unwrap();
        assert_eq!((pts.len(), pts.dim()), (10, 6));
        // Distance from the helix axis, measured intrinsically: the pairwise
        // distances of the helix are preserved, so the Gram of differences is
        // rank ≤ 3 and every point's norm is bounded by the helix's.
        for p in pts.iter() {
            let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(norm <= (0.25f64 + 1.0).sqrt() + 1e-12);
        }
        let mut a = ChaCha8Rng::seed_from_u64(4);
        let mut b = ChaCha8Rng::seed_from_u64(4);
        let x = curve_points::<f64, _>(5, 4, &mut a).unwrap();
        let y = curve_points::<f64, _>(5, 4, &mut b).unwrap();
        assert_eq!(x, y);
        assert!(curve_points::<f64, _>(10, 2, &mut rng).is_err());
    }

    #[test]
    fn median_of_samples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }
}
