//! Dense ground truth: cost and kernel matrices, high-precision Sinkhorn
//! projection, entropy and KL, the closed-form 2×2 projection, and
//! materialization of factored operators.
//!
//! Everything here is quadratic in the support size and guarded by caps.

use crate::error::{Error, Result};
use crate::geometry::{check_simplex, squared_distance, PointSet, ProblemInstance};
use crate::linalg::Matrix;
use crate::operator::{densify, LinearOperator};
use crate::scalar::{l1_distance, sum, Scalar};

/// Largest support the dense projection accepts by default.
pub const DEFAULT_PROJECTION_CAP: usize = 2_000;
/// Iteration ceiling of the dense projection.
pub const MAX_ORACLE_ITERS: usize = 10_000_000;
/// Scalings leaving `[1/ABSORB_BOUND, ABSORB_BOUND]` are folded into the
/// stored log-kernel.
const ABSORB_BOUND: f64 = 1e50;

/// A nonnegative `n × n` matrix of unit total mass.
#[derive(Debug, Clone, PartialEq)]
pub struct DensePlan<T> {
    entries: Matrix<T>,
}

impl<T: Scalar> DensePlan<T> {
    pub fn new(entries: Matrix<T>) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::input("plans must be square"));
        }
        if let Some(x) = entries.as_slice().iter().find(|x| !(**x >= T::zero()) || !x.is_finite()) {
            return Err(Error::input(format!("plan entry {x} is not a nonnegative number")));
        }
        let mass = sum(entries.as_slice());
        let tol = T::c(1e-12).max(T::epsilon() * T::from_count(4 * entries.rows()));
        if (mass - T::one()).abs() > tol {
            return Err(Error::input(format!("plan mass is {mass}, not 1")));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &Matrix<T> {
        &self.entries
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.rows() == 0
    }
}

fn check_cap(n: usize, cap: usize) -> Result<()> {
    if n > cap {
        Err(Error::Capacity { requested: n, cap })
    } else {
        Ok(())
    }
}

/// `Cᵢⱼ = ‖xᵢ − xⱼ‖²`.
pub fn cost_matrix<T: Scalar>(points: &PointSet<T>, cap: usize) -> Result<Matrix<T>> {
    check_cap(points.len(), cap)?;
    let n = points.len();
    Ok(Matrix::from_fn(n, n, |i, j| squared_distance(points.point(i), points.point(j))))
}

/// `Σ Pᵢⱼ log(1/Pᵢⱼ)` with `0 log(1/0) = 0`.
pub fn shannon_entropy<T: Scalar>(p: &Matrix<T>) -> T {
    p.as_slice()
        .iter()
        .filter(|&&x| x > T::zero())
        .fold(T::zero(), |acc, &x| acc - x * x.ln())
}

/// `⟨C, P⟩ − η⁻¹H(P)`.
pub fn entropic_objective<T: Scalar>(c: &Matrix<T>, p: &Matrix<T>, eta: T) -> Result<T> {
    if c.rows() != p.rows() || c.cols() != p.cols() {
        return Err(Error::input("cost and plan shapes differ"));
    }
    if !(eta > T::zero()) {
        return Err(Error::input(format!("eta must be positive, got {eta}")));
    }
    if let Some(x) = p.as_slice().iter().find(|x| !(**x >= T::zero())) {
        return Err(Error::input(format!("plan entry {x} is negative")));
    }
    let linear = c
        .as_slice()
        .iter()
        .zip(p.as_slice())
        .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
    Ok(linear - shannon_entropy(p) / eta)
}

/// `Σ Pᵢⱼ log(Pᵢⱼ/Qᵢⱼ)`; `+inf` when `P` charges an entry where `Q` is zero.
pub fn kl_divergence<T: Scalar>(p: &Matrix<T>, q: &Matrix<T>) -> T {
    let mut total = T::zero();
    for (&a, &b) in p.as_slice().iter().zip(q.as_slice()) {
        if a > T::zero() {
            if !(b > T::zero()) {
                return T::infinity();
            }
            total = total + a * (a / b).ln();
        }
    }
    total.max(T::zero())
}

/// Projection of a strictly positive `K` onto `M(p, q)`.
pub fn dense_sinkhorn_projection<T: Scalar>(k: &Matrix<T>, p: &[T], q: &[T], tol: T) -> Result<DensePlan<T>> {
    if let Some(x) = k.as_slice().iter().find(|x| !(**x > T::zero()) || !x.is_finite()) {
        return Err(Error::input(format!("kernel entry {x} is not positive")));
    }
    dense_sinkhorn_projection_log(&k.map(|x| x.ln()), p, q, tol)
}

/// Projection of `exp(log_k)` onto `M(p, q)`, iterating on a stabilized
/// kernel so that `log_k` entries far below the `exp` underflow threshold
/// are handled.
///
/// Stops once the `ℓ₁` marginal violation is at most `tol`, then rounds
/// exactly onto the polytope.
pub fn dense_sinkhorn_projection_log<T: Scalar>(
    log_k: &Matrix<T>,
    p: &[T],
    q: &[T],
    tol: T,
) -> Result<DensePlan<T>> {
    let n = log_k.rows();
    if !log_k.is_square() || p.len() != n || q.len() != n {
        return Err(Error::input("kernel and marginal shapes differ"));
    }
    check_simplex(p, "p")?;
    check_simplex(q, "q")?;
    if !(tol > T::zero()) {
        return Err(Error::input(format!("tolerance must be positive, got {tol}")));
    }
    if log_k.as_slice().iter().any(|x| x.is_nan() || *x == T::infinity()) {
        return Err(Error::input("log-kernel has NaN or +inf entries"));
    }

    let plain = log_k.map(|x| x.exp());
    let plain_violation = l1_distance(&plain.row_sums(), p) + l1_distance(&plain.col_sums(), q);
    if plain_violation <= tol {
        return DensePlan::new(round_dense(&plain, p, q)?);
    }

    // Rows and columns with zero target mass are zero in the projection.
    let rows: Vec<usize> = (0..n).filter(|&i| p[i] > T::zero()).collect();
    let cols: Vec<usize> = (0..n).filter(|&j| q[j] > T::zero()).collect();
    let sub = Matrix::from_fn(rows.len(), cols.len(), |a, b| log_k[(rows[a], cols[b])]);
    let p_sub: Vec<T> = rows.iter().map(|&i| p[i]).collect();
    let q_sub: Vec<T> = cols.iter().map(|&j| q[j]).collect();
    let reduced = project_reduced(&sub, &p_sub, &q_sub, tol)?;

    let mut full = Matrix::zeros(n, n);
    for (a, &i) in rows.iter().enumerate() {
        for (b, &j) in cols.iter().enumerate() {
            full[(i, j)] = reduced[(a, b)];
        }
    }
    DensePlan::new(round_dense(&full, p, q)?)
}

fn project_reduced<T: Scalar>(log_k: &Matrix<T>, p: &[T], q: &[T], tol: T) -> Result<Matrix<T>> {
    let (m1, m2) = (log_k.rows(), log_k.cols());
    let mut f: Vec<T> = log_k
        .iter_rows()
        .map(|row| -row.iter().copied().fold(T::neg_infinity(), T::max))
        .collect();
    let mut g = vec![T::neg_infinity(); m2];
    for (i, row) in log_k.iter_rows().enumerate() {
        for (gj, &x) in g.iter_mut().zip(row) {
            *gj = gj.max(x + f[i]);
        }
    }
    for gj in &mut g {
        *gj = -*gj;
    }
    if f.iter().chain(&g).any(|x| !x.is_finite()) {
        return Err(Error::input("kernel has an all-zero row or column on the marginal support"));
    }
    let stabilized = |f: &[T], g: &[T]| Matrix::from_fn(m1, m2, |i, j| (log_k[(i, j)] + f[i] + g[j]).exp());
    let mut khat = stabilized(&f, &g);
    let mut a = vec![T::one(); m1];
    let mut b = vec![T::one(); m2];
    let mut kb = vec![T::zero(); m1];
    let mut kta = vec![T::zero(); m2];
    let hi = T::c(ABSORB_BOUND);
    let lo = T::one() / hi;
    let mut violation = T::infinity();
    for it in 0..MAX_ORACLE_ITERS {
        khat.matvec(&b, &mut kb);
        if it > 0 {
            // Columns are exact after the previous column update.
            violation = a
                .iter()
                .zip(&kb)
                .zip(p)
                .fold(T::zero(), |acc, ((&ai, &k), &pi)| acc + (ai * k - pi).abs());
            if violation <= tol {
                return Ok(Matrix::from_fn(m1, m2, |i, j| a[i] * khat[(i, j)] * b[j]));
            }
        }
        for ((ai, &k), &pi) in a.iter_mut().zip(&kb).zip(p) {
            *ai = pi / k;
        }
        khat.matvec_transpose(&a, &mut kta);
        for ((bj, &k), &qj) in b.iter_mut().zip(&kta).zip(q) {
            *bj = qj / k;
        }
        if a.iter().chain(&b).any(|x| !x.is_finite() || *x == T::zero()) {
            return Err(Error::OracleFailure {
                iterations: it + 1,
                violation: violation.to_f64_lossy(),
            });
        }
        if a.iter().chain(&b).any(|&x| x > hi || x < lo) {
            for (fi, ai) in f.iter_mut().zip(&mut a) {
                *fi = *fi + ai.ln();
                *ai = T::one();
            }
            for (gj, bj) in g.iter_mut().zip(&mut b) {
                *gj = *gj + bj.ln();
                *bj = T::one();
            }
            khat = stabilized(&f, &g);
        }
    }
    Err(Error::OracleFailure {
        iterations: MAX_ORACLE_ITERS,
        violation: violation.to_f64_lossy(),
    })
}

/// Dense rounding onto `M(p, q)`: shrink over-full rows, then columns, then
/// add the rank-one repair `err_r err_cᵀ/‖err_r‖₁`.
pub fn round_dense<T: Scalar>(f: &Matrix<T>, p: &[T], q: &[T]) -> Result<Matrix<T>> {
    let n = f.rows();
    if !f.is_square() || p.len() != n || q.len() != n {
        return Err(Error::input("matrix and marginal shapes differ"));
    }
    if f.as_slice().iter().any(|x| !(*x >= T::zero())) {
        return Err(Error::InvalidOperator("matrix has a negative entry".into()));
    }
    let mut g = f.clone();
    let r = g.row_sums();
    for (i, (&ri, &pi)) in r.iter().zip(p).enumerate() {
        if ri > pi {
            let x = pi / ri;
            g.row_mut(i).iter_mut().for_each(|e| *e = *e * x);
        }
    }
    let c = g.col_sums();
    let y: Vec<T> = c
        .iter()
        .zip(q)
        .map(|(&cj, &qj)| if cj > qj { qj / cj } else { T::one() })
        .collect();
    for i in 0..n {
        for (e, &yj) in g.row_mut(i).iter_mut().zip(&y) {
            *e = *e * yj;
        }
    }
    let err_r: Vec<T> = p.iter().zip(g.row_sums()).map(|(&a, b)| (a - b).max(T::zero())).collect();
    let err_c: Vec<T> = q.iter().zip(g.col_sums()).map(|(&a, b)| (a - b).max(T::zero())).collect();
    let mass = sum(&err_r);
    if mass > T::zero() {
        for (i, &ei) in err_r.iter().enumerate() {
            let s = ei / mass;
            for (e, &ej) in g.row_mut(i).iter_mut().zip(&err_c) {
                *e = *e + s * ej;
            }
        }
    }
    Ok(g)
}

/// `K_{ε,δ} = [[1−ε, ε], [1−δ, δ]]`.
pub fn two_by_two_kernel<T: Scalar>(epsilon: T, delta: T) -> Matrix<T> {
    Matrix::from_vec(2, 2, vec![T::one() - epsilon, epsilon, T::one() - delta, delta]).expect("2x2 buffer")
}

/// Diagonal entry `a` of the projection `[[a, ½−a], [½−a, a]]` of
/// `K_{ε,δ}` onto uniform marginals.
pub fn sinkhorn_2x2_closed_form<T: Scalar>(epsilon: T, delta: T) -> Result<T> {
    let inside = |x: T| x > T::zero() && x < T::one();
    if !inside(epsilon) || !inside(delta) {
        return Err(Error::input(format!(
            "epsilon and delta must lie in (0, 1), got {epsilon} and {delta}"
        )));
    }
    let s = (delta * (T::one() - epsilon)).sqrt();
    let t = (epsilon * (T::one() - delta)).sqrt();
    Ok(s / (T::c(2.0) * (s + t)))
}

/// Materializes a factored operator through products with basis vectors.
pub fn densify_plan<T: Scalar, O: LinearOperator<T> + ?Sized>(op: &O, cap: usize) -> Result<Matrix<T>> {
    check_cap(op.dim(), cap)?;
    Ok(densify(op))
}

/// `W_η(p, q)` and its minimizer `P^η`, computed densely.
pub fn reference_w_eta<T: Scalar>(instance: &ProblemInstance<T>, tol: T) -> Result<(T, DensePlan<T>)> {
    reference_w_eta_with_cap(instance, tol, DEFAULT_PROJECTION_CAP)
}

pub fn reference_w_eta_with_cap<T: Scalar>(
    instance: &ProblemInstance<T>,
    tol: T,
    cap: usize,
) -> Result<(T, DensePlan<T>)> {
    let c = cost_matrix(instance.support(), cap)?;
    let eta = instance.eta();
    let plan = dense_sinkhorn_projection_log(&c.map(|x| -eta * x), instance.p(), instance.q(), tol)?;
    let w = entropic_objective(&c, plan.entries(), eta)?;
    Ok((w, plan))
}
