//! End-to-end solve: accuracy schedule, adaptive Nyström kernel, Sinkhorn
//! scaling and rounding onto the transport polytope.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::ProblemInstance;
use crate::kernel::{dense_kernel, GaussianKernel, DEFAULT_KERNEL_CAP};
use crate::linalg::Matrix;
use crate::nystrom::{
    adaptive_nystrom, approximate_ridge_leverage_scores, build_factor, sample_landmarks, NystromFactor,
    RankLimits,
};
use crate::operator::{LinearOperator, ScaledOperator};
use crate::reference::DEFAULT_PROJECTION_CAP;
use crate::rounding::{round_to_polytope, FactoredPlan};
use crate::scalar::Scalar;
use crate::sinkhorn::{default_max_iters, sinkhorn_scale, ScalingPair, SinkhornOptions};

/// Per-stage RNG streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Synthetic instance generation.
    Instance = 0,
    /// Landmark sampling.
    Nystrom = 1,
}

/// `ChaCha8Rng` seeded with `seed` on the stage's stream.
pub fn stage_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// How the Nyström rank is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RankPolicy {
    /// Double until the entrywise certificate meets the schedule's tolerance.
    #[default]
    Adaptive,
    /// Use this many landmarks and skip the certificate.
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub seed: u64,
    /// Rank ceiling; `None` means the support size.
    pub r_max: Option<usize>,
    /// Supports up to this size may fall back to the exact kernel.
    pub dense_cap: usize,
    /// Retries after a nonpositive Sinkhorn denominator.
    pub max_retries: usize,
    pub rank: RankPolicy,
    /// Sinkhorn iteration ceiling; `None` uses [`default_max_iters`].
    pub max_sinkhorn_iters: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            r_max: None,
            dense_cap: DEFAULT_PROJECTION_CAP,
            max_retries: 5,
            rank: RankPolicy::Adaptive,
            max_sinkhorn_iters: None,
        }
    }
}

/// The kernel the solve actually scaled.
#[derive(Debug, Clone)]
pub enum KernelOperator<T> {
    Nystrom(NystromFactor<T>),
    Dense(Matrix<T>),
}

impl<T: Scalar> KernelOperator<T> {
    pub fn is_dense(&self) -> bool {
        matches!(self, KernelOperator::Dense(_))
    }

    /// Landmark count, or the support size for the exact kernel.
    pub fn rank(&self) -> usize {
        match self {
            KernelOperator::Nystrom(f) => f.rank(),
            KernelOperator::Dense(k) => k.rows(),
        }
    }
}

impl<T: Scalar> LinearOperator<T> for KernelOperator<T> {
    fn dim(&self) -> usize {
        match self {
            KernelOperator::Nystrom(f) => f.dim(),
            KernelOperator::Dense(k) => k.dim(),
        }
    }

    fn apply(&self, x: &[T], out: &mut [T]) {
        match self {
            KernelOperator::Nystrom(f) => f.apply(x, out),
            KernelOperator::Dense(k) => k.apply(x, out),
        }
    }

    fn apply_transpose(&self, x: &[T], out: &mut [T]) {
        match self {
            KernelOperator::Nystrom(f) => f.apply_transpose(x, out),
            KernelOperator::Dense(k) => k.apply_transpose(x, out),
        }
    }
}

/// Stage durations in milliseconds. Nyström and Sinkhorn times accumulate
/// over retries.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WallTimes {
    pub nystrom_ms: f64,
    pub sinkhorn_ms: f64,
    pub round_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport<T> {
    /// Estimate `Ŵ` of `W_η(p, q)`.
    pub w_hat: T,
    /// Rank of the kernel used; the support size after a dense fallback.
    pub rank: usize,
    pub sinkhorn_iterations: usize,
    pub nystrom_rounds: usize,
    pub retries: usize,
    pub wall_times: WallTimes,
    pub eps_prime: T,
    /// Entrywise Nyström tolerance `(ε′/2)e^{−4ηR²}`.
    pub tau: T,
    /// Certificate `maxᵢ |1 − K̃ᵢᵢ|` of the final factor (zero for the exact kernel).
    pub nystrom_err: T,
    /// Sinkhorn's final violation against the smoothed marginals.
    pub marginal_violation: T,
    /// Whether the exact kernel replaced the Nyström factor.
    pub dense_fallback: bool,
    /// Set when `η ∉ [1, n]`, outside the range the accuracy schedule assumes.
    pub eta_out_of_range: bool,
}

/// Everything a solve produces.
#[derive(Debug, Clone)]
pub struct Solution<T> {
    /// Feasible plan `P̂`.
    pub plan: FactoredPlan<T, KernelOperator<T>>,
    /// Sinkhorn's scalings of the kernel before rounding.
    pub scalings: ScalingPair<T>,
    pub report: SolveReport<T>,
}

impl<T: Scalar> Solution<T> {
    /// The scaled kernel operator.
    pub fn kernel(&self) -> &KernelOperator<T> {
        self.plan.base.inner()
    }
}

/// `ε′ = min(1, εη / (50·max(1, 4R²η + log(n/(ηε)))))`.
pub fn compute_eps_prime<T: Scalar>(eps: T, eta: T, n: usize, radius: T) -> T {
    let paren = T::c(4.0) * radius * radius * eta + (T::from_count(n) / (eta * eps)).ln();
    let denom = T::c(50.0) * paren.max(T::one());
    (eps * eta / denom).min(T::one())
}

/// `(ε′/2)e^{−4ηR²}`.
pub fn nystrom_tolerance<T: Scalar>(eps_prime: T, eta: T, radius: T) -> T {
    eps_prime / T::c(2.0) * (-T::c(4.0) * eta * radius * radius).exp()
}

/// Solves with an RNG seeded from `config.seed` on the Nyström stream.
pub fn solve<T: Scalar>(instance: &ProblemInstance<T>, config: &SolverConfig) -> Result<Solution<T>> {
    let mut rng = stage_rng(config.seed, Stream::Nystrom);
    nys_sink(instance, &mut rng, config)
}

/// Full solve. A nonpositive denominator during scaling doubles the rank
/// floor and retries; once retries run out, or the rank ceiling is reached,
/// supports within `dense_cap` fall back to the exact kernel.
pub fn nys_sink<T: Scalar, R: Rng + ?Sized>(
    instance: &ProblemInstance<T>,
    rng: &mut R,
    config: &SolverConfig,
) -> Result<Solution<T>> {
    let start = Instant::now();
    let n = instance.len();
    let (eta, eps, radius) = (instance.eta(), instance.eps(), instance.radius());
    let eta_out_of_range = eta < T::one() || eta > T::from_count(n);
    if eta_out_of_range {
        log::warn!("eta = {eta} lies outside [1, n = {n}]; accuracy bounds assume it does not");
    }
    let eps_prime = compute_eps_prime(eps, eta, n.max(2), radius);
    let tau = nystrom_tolerance(eps_prime, eta, radius);
    let kernel = GaussianKernel::new(eta)?;
    let max_iters = config.max_sinkhorn_iters.unwrap_or_else(|| {
        default_max_iters(
            eps_prime.to_f64_lossy(),
            eta.to_f64_lossy(),
            radius.to_f64_lossy(),
            n,
        )
    });
    let options = SinkhornOptions::new(eps_prime, eta, max_iters);
    let dense_allowed = n <= config.dense_cap;
    let mut times = WallTimes::default();
    let mut floor = 2;
    let mut retries = 0;
    let mut rounds = 0;
    let mut force_dense = false;

    let (op, nystrom_err, scaled) = loop {
        let t = Instant::now();
        let (op, err) = if force_dense {
            (dense_operator(instance, &kernel)?, T::zero())
        } else {
            match build_kernel(instance, &kernel, tau, rng, config, floor) {
                Ok((factor, r, err)) => {
                    rounds += r;
                    (KernelOperator::Nystrom(factor), err)
                }
                Err(Error::RankExhausted { rank, err, .. }) if dense_allowed => {
                    log::info!("rank ceiling {rank} reached with certificate {err:e}; using the exact kernel");
                    rounds += 1;
                    (dense_operator(instance, &kernel)?, T::zero())
                }
                Err(e) => return Err(e.in_stage("nystrom")),
            }
        };
        times.nystrom_ms += ms(t);

        let t = Instant::now();
        let result = sinkhorn_scale(&op, instance.p(), instance.q(), options);
        times.sinkhorn_ms += ms(t);
        match result {
            Ok(res) => break (op, err, res),
            Err(e @ Error::NonpositiveOperator { .. }) => {
                if op.is_dense() || retries >= config.max_retries {
                    if !op.is_dense() && dense_allowed {
                        log::info!("retries exhausted; using the exact kernel");
                        force_dense = true;
                        continue;
                    }
                    return Err(Error::RetryExhausted {
                        retries,
                        last: Box::new(e),
                    }
                    .in_stage("sinkhorn"));
                }
                retries += 1;
                floor = op.rank() * 2;
                log::info!("nonpositive operator at rank {}; retrying with rank floor {floor}", op.rank());
            }
            Err(e) => return Err(e.in_stage("sinkhorn")),
        }
    };

    let t = Instant::now();
    let rank = op.rank();
    let dense_fallback = op.is_dense();
    let scalings = scaled.scalings.clone();
    let base = ScaledOperator::new(op, scaled.scalings.u, scaled.scalings.v);
    let plan = round_to_polytope(
        base,
        &scaled.row_marginals,
        &scaled.col_marginals,
        instance.p(),
        instance.q(),
    )
    .map_err(|e| e.in_stage("round"))?;
    times.round_ms = ms(t);
    times.total_ms = ms(start);

    Ok(Solution {
        plan,
        scalings,
        report: SolveReport {
            w_hat: scaled.w_hat,
            rank,
            sinkhorn_iterations: scaled.iterations,
            nystrom_rounds: rounds,
            retries,
            wall_times: times,
            eps_prime,
            tau,
            nystrom_err,
            marginal_violation: scaled.final_violation,
            dense_fallback,
            eta_out_of_range,
        },
    })
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn dense_operator<T: Scalar>(instance: &ProblemInstance<T>, kernel: &GaussianKernel<T>) -> Result<KernelOperator<T>> {
    dense_kernel(instance.support(), kernel, DEFAULT_KERNEL_CAP)
        .map(KernelOperator::Dense)
        .map_err(|e| e.in_stage("nystrom"))
}

/// Returns the factor, the number of factors built and the certificate.
fn build_kernel<T: Scalar, R: Rng + ?Sized>(
    instance: &ProblemInstance<T>,
    kernel: &GaussianKernel<T>,
    tau: T,
    rng: &mut R,
    config: &SolverConfig,
    floor: usize,
) -> Result<(NystromFactor<T>, usize, T)> {
    let points = instance.support();
    let n = points.len();
    match config.rank {
        RankPolicy::Adaptive => {
            let limits = RankLimits {
                r_max: config.r_max,
                r_floor: floor,
            };
            let out = adaptive_nystrom(points, kernel, tau, rng, limits)?;
            Ok((out.factor, out.rounds, out.err))
        }
        RankPolicy::Fixed(r) => {
            let rank = r.max(floor).min(config.r_max.unwrap_or(n)).min(n).max(1);
            let scores = approximate_ridge_leverage_scores(points, kernel, tau, rng)?;
            let landmarks = sample_landmarks(&scores, rank, rng)?;
            let factor = build_factor(points, kernel, &landmarks)?;
            let err = factor.error_certificate();
            Ok((factor, 1, err))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{merge_supports, PointSet, WeightedCloud};
    use crate::rounding::plan_marginals;
    use crate::scalar::l1_distance;

    #[test]
    fn eps_prime_examples() {
        let v: f64 = compute_eps_prime(1.0, 1.0, 2, 1.0);
        assert!((v - 1.0 / (50.0 * (4.0 + 2f64.ln()))).abs() < 1e-15);
        assert!((v - 0.004261).abs() < 1e-6);
        // Paren clamped at one when the log is very negative.
        assert_eq!(compute_eps_prime(1.0, 100.0, 2, 0.0), 1.0);
        assert_eq!(compute_eps_prime(1.0, 2.0, 2, 0.0), 2.0 / 50.0);
    }

    #[test]
    fn eps_prime_monotone_in_eps() {
        for &eta in &[0.5, 1.0, 5.0, 50.0] {
            for &n in &[2usize, 10, 1000, 1_000_000] {
                for &r in &[0.0, 0.5, 1.0, 3.0] {
                    let mut last = 0.0;
                    for k in 1..=100 {
                        let v = compute_eps_prime(k as f64 / 100.0, eta, n, r);
                        assert!(v >= last && v > 0.0 && v <= 1.0);
                        last = v;
                    }
                }
            }
        }
    }

    #[test]
    fn stage_streams_differ() {
        let a: u64 = stage_rng(7, Stream::Instance).gen();
        let b: u64 = stage_rng(7, Stream::Nystrom).gen();
        let c: u64 = stage_rng(7, Stream::Nystrom).gen();
        assert_ne!(a, b);
        assert_eq!(b, c);
    }

    fn cloud(pts: &[[f64; 2]]) -> WeightedCloud<f64> {
        WeightedCloud::uniform(PointSet::from_points(&pts.iter().map(|p| p.to_vec()).collect::<Vec<_>>()).unwrap())
            .unwrap()
    }

    #[test]
    fn point_masses_give_the_distance() {
        let inst = merge_supports(&cloud(&[[0.0, 0.0]]), &cloud(&[[3.0, 4.0]]), 1.0, 0.1).unwrap();
        let sol = solve(&inst, &SolverConfig::default()).unwrap();
        assert!((sol.report.w_hat - 25.0).abs() <= 0.1, "{}", sol.report.w_hat);
        let (r, c) = plan_marginals(&sol.plan);
        assert!(l1_distance(&r, inst.p()) + l1_distance(&c, inst.q()) <= 1e-12);
        assert!(sol.report.rank >= 1 && sol.report.eps_prime <= 1.0);
    }

    #[test]
    fn out_of_range_eta_is_flagged() {
        let inst = merge_supports(&cloud(&[[0.0, 0.0], [0.1, 0.0]]), &cloud(&[[0.0, 0.1]]), 0.5, 0.2).unwrap();
        let sol = solve(&inst, &SolverConfig::default()).unwrap();
        assert!(sol.report.eta_out_of_range);
    }

    #[test]
    fn rank_ceiling_falls_back_or_fails() {
        let pts: Vec<[f64; 2]> = (0..30).map(|i| [i as f64 / 30.0, (i * i % 7) as f64 / 7.0]).collect();
        let inst = merge_supports(&cloud(&pts[..15]), &cloud(&pts[15..]), 5.0, 0.2).unwrap();
        let capped = SolverConfig {
            r_max: Some(2),
            ..SolverConfig::default()
        };
        let sol = solve(&inst, &capped).unwrap();
        assert!(sol.report.dense_fallback);
        assert_eq!(sol.report.rank, 30);
        let no_dense = SolverConfig {
            dense_cap: 10,
            ..capped
        };
        let err = solve(&inst, &no_dense).unwrap_err();
        assert!(matches!(err.root(), Error::RankExhausted { rank: 2, .. }));
    }
}
