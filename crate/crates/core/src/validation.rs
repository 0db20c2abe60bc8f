//! Randomized property suites over the solver's building blocks.
//!
//! Each suite draws its own samples from a stream of the configured seed, so
//! the verdicts are reproducible and independent of the order suites run in.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::geometry::PointSet;
use crate::kernel::{dense_kernel, GaussianKernel};
use crate::linalg::Matrix;
use crate::nystrom::{adaptive_nystrom, RankLimits};
use crate::operator::{densify, ScaledOperator};
use crate::pipeline::compute_eps_prime;
use crate::reference::{dense_sinkhorn_projection, entropic_objective, kl_divergence, shannon_entropy};
use crate::rounding::round_to_polytope;
use crate::sinkhorn::{sinkhorn_scale, SinkhornOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationConfig {
    pub seed: u64,
    /// Samples drawn by every suite.
    pub samples: usize,
    /// Additive slack allowed on the inequality suites.
    pub slack: f64,
    /// Fault injection: return the unrounded matrix from the rounding step.
    pub skip_rounding: bool,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig { seed: 0, samples: 1000, slack: 1e-9, skip_rounding: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    /// `|V_C(P) − V_C̃(P)| ≤ ‖C − C̃‖_∞`.
    CostHolder,
    /// `|H(P) − H(Q)| ≤ δ log(2n/δ)` for `‖P − Q‖₁ ≤ δ ≤ 1`, `n` the side length.
    EntropyContinuity,
    /// `|V_M(P) − V_M(Q)| ≤ δ‖M‖_∞ + η⁻¹δ log(2n/δ)`.
    ObjectiveContinuity,
    /// `V_C(Q) − V_C(P) − ⟨∇V_C(P), Q − P⟩ = η⁻¹ KL(Q‖P)`.
    BregmanKl,
    /// `|log a − log b| ≤ |a − b| / min(a, b)`.
    LogLipschitz,
    /// Rounded plans lie in `M(p, q)` to 1e-12.
    RoundingFeasibility,
    /// `‖G − F‖₁` is at most the marginal violation of a unit-mass `F`.
    RoundingDistance,
    /// The scaling cost estimate equals `V_C̃(P̃)` to 1e-10.
    CostEstimateIdentity,
    /// `‖Π(K) − Π(K̃)‖₁ ≤ ‖log K − log K̃‖_∞`.
    ProjectionLogLipschitz,
    /// `|V_C̃(Π(K̃)) − V_C̃(P̃)| ≤ δ‖C̃‖_∞ + η⁻¹δ log(2n/δ)` for Sinkhorn output `P̃`.
    MarginalStability,
    /// The Nyström certificate equals the dense sup-norm error and meets τ.
    NystromCertificate,
    /// The chosen ε′ keeps the accumulated error within ε/2.
    PrecisionBudget,
}

impl Suite {
    pub const ALL: [Suite; 12] = [
        Suite::CostHolder,
        Suite::EntropyContinuity,
        Suite::ObjectiveContinuity,
        Suite::BregmanKl,
        Suite::LogLipschitz,
        Suite::RoundingFeasibility,
        Suite::RoundingDistance,
        Suite::CostEstimateIdentity,
        Suite::ProjectionLogLipschitz,
        Suite::MarginalStability,
        Suite::NystromCertificate,
        Suite::PrecisionBudget,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Suite::CostHolder => "cost-holder",
            Suite::EntropyContinuity => "entropy-continuity",
            Suite::ObjectiveContinuity => "objective-continuity",
            Suite::BregmanKl => "bregman-kl",
            Suite::LogLipschitz => "log-lipschitz",
            Suite::RoundingFeasibility => "rounding-feasibility",
            Suite::RoundingDistance => "rounding-distance",
            Suite::CostEstimateIdentity => "cost-estimate-identity",
            Suite::ProjectionLogLipschitz => "projection-log-lipschitz",
            Suite::MarginalStability => "marginal-stability",
            Suite::NystromCertificate => "nystrom-certificate",
            Suite::PrecisionBudget => "precision-budget",
        }
    }

    pub fn from_id(id: &str) -> Option<Suite> {
        Suite::ALL.into_iter().find(|s| s.id() == id)
    }

    fn stream(self) -> u64 {
        100 + Suite::ALL.iter().position(|&s| s == self).unwrap_or(0) as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOutcome {
    pub suite: Suite,
    pub samples: usize,
    pub violations: usize,
    /// Largest amount by which a sample exceeded its bound (≤ 0 when none did).
    pub worst_excess: f64,
    /// First error raised by a sample, if any; such samples count as violations.
    pub first_error: Option<String>,
}

impl SuiteOutcome {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

struct Tally {
    samples: usize,
    violations: usize,
    worst: f64,
    first_error: Option<String>,
}

impl Tally {
    fn new() -> Self {
        Tally { samples: 0, violations: 0, worst: f64::NEG_INFINITY, first_error: None }
    }

    /// Records `lhs ≤ rhs + slack`.
    fn check(&mut self, lhs: f64, rhs: f64, slack: f64) {
        self.samples += 1;
        let excess = lhs - rhs;
        self.worst = self.worst.max(excess);
        if !(excess <= slack) {
            self.violations += 1;
        }
    }

    fn record(&mut self, sample: Result<(f64, f64)>, slack: f64) {
        match sample {
            Ok((lhs, rhs)) => self.check(lhs, rhs, slack),
            Err(e) => {
                self.samples += 1;
                self.violations += 1;
                self.first_error.get_or_insert_with(|| e.to_string());
            }
        }
    }

    fn finish(self, suite: Suite) -> SuiteOutcome {
        SuiteOutcome {
            suite,
            samples: self.samples,
            violations: self.violations,
            worst_excess: self.worst,
            first_error: self.first_error,
        }
    }
}

pub fn run_all(config: &ValidationConfig) -> Vec<SuiteOutcome> {
    Suite::ALL.into_iter().map(|s| run_suite(s, config)).collect()
}

pub fn run_suite(suite: Suite, config: &ValidationConfig) -> SuiteOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(suite.stream());
    let rng = &mut rng;
    let slack = config.slack;
    let mut tally = Tally::new();
    for _ in 0..config.samples {
        let sample = match suite {
            Suite::CostHolder => cost_holder(rng),
            Suite::EntropyContinuity => entropy_continuity(rng),
            Suite::ObjectiveContinuity => objective_continuity(rng),
            Suite::BregmanKl => bregman_kl(rng),
            Suite::LogLipschitz => log_lipschitz(rng),
            Suite::RoundingFeasibility => rounding_feasibility(rng, config.skip_rounding),
            Suite::RoundingDistance => rounding_distance(rng, config.skip_rounding),
            Suite::CostEstimateIdentity => cost_estimate_identity(rng),
            Suite::ProjectionLogLipschitz => projection_log_lipschitz(rng),
            Suite::MarginalStability => marginal_stability(rng),
            Suite::NystromCertificate => nystrom_certificate(rng),
            Suite::PrecisionBudget => precision_budget(rng),
        };
        let slack = match suite {
            Suite::RoundingFeasibility | Suite::RoundingDistance => 0.0,
            Suite::ProjectionLogLipschitz => 1e-6,
            Suite::CostEstimateIdentity => slack.min(1e-10),
            _ => slack,
        };
        tally.record(sample, slack);
    }
    tally.finish(suite)
}

fn side<R: Rng>(rng: &mut R, lo: usize, hi: usize) -> usize {
    rng.gen_range(lo..=hi)
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

/// Random nonnegative `n × n` matrix with unit mass; with `sparse` roughly a
/// quarter of the entries are zero.
fn simplex_matrix<R: Rng>(rng: &mut R, n: usize, sparse: bool) -> Matrix<f64> {
    loop {
        let mut m = Matrix::from_vec(
            n,
            n,
            (0..n * n)
                .map(|_| {
                    if sparse && rng.gen_bool(0.25) {
                        0.0
                    } else {
                        -rng.gen_range(f64::MIN_POSITIVE..1.0f64).ln()
                    }
                })
                .collect(),
        )
        .expect("shape");
        let total = m.as_slice().iter().sum::<f64>();
        if total > 0.0 {
            m.as_mut_slice().iter_mut().for_each(|x| *x /= total);
            return m;
        }
    }
}

fn simplex_vector<R: Rng>(rng: &mut R, n: usize, zeros: bool) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n)
            .map(|_| if zeros && rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.05..1.0) })
            .collect();
        let total: f64 = v.iter().sum();
        if total > 0.0 {
            return v.into_iter().map(|x| x / total).collect();
        }
    }
}

fn random_matrix<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Matrix<f64> {
    Matrix::from_vec(n, n, (0..n * n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape")
}

/// `Q = (1 − t)P + tQ₀` with `‖P − Q‖₁` drawn from `(0, 1]`; returns `(Q, δ)`.
fn nearby<R: Rng>(rng: &mut R, p: &Matrix<f64>, sparse: bool) -> (Matrix<f64>, f64) {
    let q0 = simplex_matrix(rng, p.rows(), sparse);
    let dist = p.sub(&q0).l1_norm();
    let target = log_uniform(rng, 1e-6, 1.0);
    let t = if dist > 0.0 { (target / dist).min(1.0) } else { 1.0 };
    let q = Matrix::from_fn(p.rows(), p.cols(), |i, j| {
        (1.0 - t) * p.row(i)[j] + t * q0.row(i)[j]
    });
    let delta = p.sub(&q).l1_norm();
    (q, delta)
}

fn cost_holder<R: Rng>(rng: &mut R) -> Result<(f64, f64)> {
    let n = side(rng, 1, 8);
    let eta = log_uniform(rng, 0.1, 50.0);
    let c = random_matrix(rng, n, 0.0, 4.0);
    let noise = random_matrix(rng, n, -0.5, 0.5);
    let c2 = Matrix::from_fn(n, n, |i, j| c.row(i)[j] + noise.row(i)[j]);
    let p = simplex_matrix(rng, n, true);
    let lhs = (entropic_objective(&c, &p, eta)? - entropic_objective(&c2, &p, eta)?).abs();
    Ok((lhs, c.sub(&c2).max_abs()))
}

fn entropy_continuity<R: Rng>(rng: &mut R) -> Result<(f64, f64)> {
    let n = side(rng, 1, 8);
    let p = simplex_matrix(rng, n, true);
    let (q, delta) = nearby(rng, &p, true);
    if delta == 0.0 {
        return Ok((0.0, 0.0));
    }
    let lhs = (shannon_entropy(&p) - shannon_entropy(&q)).abs();
    Ok((lhs, delta * (2.0 * n as f64 / delta).ln()))
}

fn objective_continuity<R: Rng>(rng: &mut R) -> Result<(f64, f64)> {
    let n = side(rng, 1, 8);
    let eta = log_uniform(rng, 0.1, 50.0);
    let m = random_matrix(rng, n, -3.0, 3.0);
    let p = simplex_matrix(rng, n, true);
    let (q, delta) = nearby(rng, &p, true);
    if delta == 0.0 {
        return Ok((0.0, 0.0));
    }
    let lhs = (entropic_objective(&m, &p, eta)? - entropic_objective(&m, &q, eta)?).abs();
    let rhs = delta * m.max_abs() + delta * (2.0 * n as f64 / delta).ln() / eta;
    Ok((lhs, rhs))
}

/// Two-sided: reports `(|lhs − rhs|, 0)`.
fn bregman_kl<R: Rng>(rng: &mut R) -> Result<(f64, f64)> {
    let n = side(rng, 1, 8);
    let eta = log_uniform(rng, 0.1, 50.0);
    let c = random_matrix(rng, n, 0.0, 4.0);
    let p = simplex_matrix(rng, n, false);
    let q = simplex_matrix(rng, n, false);
    let first_order: f64 = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| {
            let grad = c.row(i)[j] + (1.0 + p.row(i)[j].ln()) / eta;
            grad * (q.row(i)[j] - p.row(i)[j])
        })
        .sum();
    let lhs = entropic_objective(&c, &q, eta)? - entropic_objective(&c, &p, eta)? - first_order;
    Ok(((lhs - kl_divergence(&q, &p) / eta).abs(), 0.0))
}

fn log_lipschitz<R: Rng>(rng: &mut R) -> Result<(f64, f64)> {
    let a = log_uniform(rng, 1e-8, 1e8);
    let b = if rng.gen_bool(0.5) { a * rng.gen_range(0.5..2.0) } else { log_uniform(rng, 1e-8, 1e8) };
    Ok(((a.ln() - b.ln()).abs(), (a - b).abs() / a.min(b)))
}

/// `F = D₁AD₂` with random positive `A` and log-scalings, plus its marginals.
fn scaled_instance<R: Rng>(
    rng: &mut R,
    n: usize,
    unit_mass: bool,
) -> (ScaledOperator<f64, Matrix<f64>>, Vec<f64>, Vec<f64>) {
    let a = random_matrix(rng, n, 0.01, 1.0);
    let row_log: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let col_log: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut f = ScaledOperator::new(a, row_log, col_log);
    if unit_mass {
        let mass: f64 = f.row_marginals().iter().sum();
        f.shift_rows(&vec![-mass.ln(); n]);
    }
    let rows = f.row_marginals();
    let cols = f.col_marginals();
    (f, rows, cols)
}

/// `(G, F, p, q, marginal violation of F)`.
type RoundedPair = (Matrix<f64>, Matrix<f64>, Vec<f64>, Vec<f64>, f64);

/// Dense `(G, F)` for a random `F` rounded onto `M(p, q)`, or `G = F` when
/// rounding is skipped.
fn rounded_pair<R: Rng>(rng: &mut R, unit_mass: bool, skip_rounding: bool) -> Result<RoundedPair> {
    let n = side(rng, 1, 10);
    let (f, rows, cols) = scaled_instance(rng, n, unit_mass);
    let p = simplex_vector(rng, n, true);
    let q = simplex_vector(rng, n, true);
    let dense_f = densify(&f);
    let violation = crate::scalar::l1_distance(&rows, &p) + crate::scalar::l1_distance(&cols, &q);
    let g = if skip_rounding {
        dense_f.clone()
    } else {
        densify(&round_to_polytope(f, &rows, &cols, &p, &q)?)
    };
    Ok((g, dense_f, p, q, violation))
}

fn rounding_feasibility<R: Rng>(rng: &mut R, skip_rounding: bool) -> Result<(f64, f64)> {
    let unit_mass = rng.gen_bool(0.5);
    let (g, _, p, q, _) = rounded_pair(rng, unit_mass, skip_rounding)?;
    if g.as_slice().iter().any(|&x| x < 0.0) {
        return Err(Error::InvalidOperator("rounded plan has a negative entry".into()));
    }
    let err = crate::scalar::l1_distance(&g.row_sums(), &p) + crate::scalar::l1_distance(&g.col_sums(), &q);
    Ok((err, 1e-12))
}

fn rounding_distance<R: Rng>(rng: &mut R, skip_rounding: bool) -> Result<(f64, f64)> {
    let (g, f, _, _, violation) = rounded_pair(rng, true, skip_rounding)?;
    Ok((g.sub(&f).l1_norm(), violation + 1e-12))
}

/// Positive kernel from random points; returns `(K, η)`.
fn gaussian_matrix<R: Rng>(rng: &mut R, n: usize) -> Result<(Matrix<f64>, f64)> {
    let d = side(rng, 1, 3);
    let eta = log_uniform(rng, 0.2, 10.0);
    let pts = PointSet::new(d, (0..n * d).map(|_| rng.gen_range(-0.5..0.5)).collect())?;
    let k = dense_kernel(&pts, &GaussianKernel::new(eta)?, n)?;
    Ok((k, eta))
}

fn tilde_cost(k: &Matrix<f64>, eta: f64) -> Matrix<f64> {
    k.map(|x| -x.ln() / eta)
}

/// Two-sided, relative: reports `(|Ŵ − V_C̃(P̃)| / max(1, |V|), 0)`.
fn cost_estimate_identity<R: Rng>(rng: &mut R) -> Result<(f64, f64)> {
    let n = side(rng, 2, 12);
    let (k, eta) = gaussian_matrix(rng, n)?;
    let p = simplex_vector(rng, n, true);
    let q = simplex_vector(rng, n, true);
    let delta = log_uniform(rng, 1e-4, 0.5);
    let res = sinkhorn_scale(&k, &p, &q, SinkhornOptions::new(delta, eta, 1_000_000))?;
    let plan = densify(&ScaledOperator::new(k.clone(), res.scalings.u.clone(), res.scalings.v.clone()));
    let v = entropic_objective(&tilde_cost(&k, eta), &plan, eta)?;
    Ok(((res.w_hat - v).abs() / v.abs().max(1.0), 0.0))
}

fn projection_log_lipschitz<R: Rng>(rng: &mut R) -> Result<(f64, f64)> {
    let n = 8;
    let t = [0.01, 0.05, 0.1][rng.gen_range(0..3)];
    let k = random_matrix(rng, n, (-3.0f64).exp(), 1.0);
    let noise = random_matrix(rng, n, -1.0, 1.0);
    let k2 = Matrix::from_fn(n, n, |i, j| k.row(i)[j] * (t * noise.row(i)[j]).exp());
    let p = simplex_vector(rng, n, false);
    let q = simplex_vector(rng, n, false);
    let a = dense_sinkhorn_projection(&k, &p, &q, 1e-12)?;
    let b = dense_sinkhorn_projection(&k2, &p, &q, 1e-12)?;
    let log_dist = k.map(f64::ln).sub(&k2.map(f64::ln)).max_abs();
    Ok((a.entries().sub(b.entries()).l1_norm(), log_dist))
}

fn marginal_stability<R: Rng>(rng: &mut R) -> Result<(f64, f64)> {
    let n = side(rng, 2, 10);
    let (k, eta) = gaussian_matrix(rng, n)?;
    let p = simplex_vector(rng, n, false);
    let q = simplex_vector(rng, n, false);
    let res = sinkhorn_scale(&k, &p, &q, SinkhornOptions::new(log_uniform(rng, 1e-3, 0.5), eta, 1_000_000))?;
    let approx = densify(&ScaledOperator::new(k.clone(), res.scalings.u.clone(), res.scalings.v.clone()));
    let delta = crate::scalar::l1_distance(&approx.row_sums(), &p) + crate::scalar::l1_distance(&approx.col_sums(), &q);
    if !(delta > 0.0 && delta <= 1.0) {
        return Ok((0.0, 0.0));
    }
    let c = tilde_cost(&k, eta);
    let exact = dense_sinkhorn_projection(&k, &p, &q, 1e-12)?;
    let lhs = (entropic_objective(&c, exact.entries(), eta)? - entropic_objective(&c, &approx, eta)?).abs();
    let rhs = delta * c.max_abs() + delta * (2.0 * n as f64 / delta).ln() / eta;
    Ok((lhs, rhs))
}

/// Checks `err ≤ τ`, and when no jitter was added also that `err` matches the
/// dense sup-norm error; reports the larger excess.
fn nystrom_certificate<R: Rng>(rng: &mut R) -> Result<(f64, f64)> {
    let n = side(rng, 5, 60);
    let d = side(rng, 1, 3);
    let eta = log_uniform(rng, 0.5, 5.0);
    let tau = log_uniform(rng, 1e-4, 1e-1);
    let pts = PointSet::new(d, (0..n * d).map(|_| rng.gen_range(-0.5..0.5)).collect())?;
    let kernel = GaussianKernel::new(eta)?;
    let fit = adaptive_nystrom(&pts, &kernel, tau, rng, RankLimits::default())?;
    let mut excess = fit.err - tau;
    if fit.factor.jitter() == 0.0 {
        let dense = dense_kernel(&pts, &kernel, n)?.sub(&densify(&fit.factor)).max_abs();
        excess = excess.max((dense - fit.err).abs() - 1e-9);
    }
    Ok((excess, 0.0))
}

fn precision_budget<R: Rng>(rng: &mut R) -> Result<(f64, f64)> {
    let n = log_uniform(rng, 2.0, 1e7) as usize;
    let eps = rng.gen_range(1e-4..1.0);
    let eta = rng.gen_range(1.0..=(n as f64).min(100.0));
    let radius = rng.gen_range(0.5..5.0);
    let c_inf = 4.0 * radius * radius;
    let d = compute_eps_prime(eps, eta, n, radius);
    let lhs = d * (2.0 * c_inf + 3.0 / eta) + 2.0 * d * (2.0 * n as f64 / d).ln() / eta;
    Ok((lhs, eps / 2.0))
}
