//! Rounding an approximately feasible scaled operator onto the transport
//! polytope `M(p, q)`.
//!
//! Rows with too much mass are scaled down, then columns, and the remaining
//! deficit is repaired with a nonnegative rank-one term. The scaling passes
//! only touch the log-diagonals of the base operator, so the plan stays
//! factored: `G = D₁′ A D₂′ + err_r err_cᵀ / ‖err_r‖₁`.

use crate::error::{Error, Result};
use crate::geometry::check_simplex;
use crate::operator::{LinearOperator, ScaledOperator};
use crate::scalar::{dot, sum, Scalar};

/// Entries of the deficit vectors in `[−NEGATIVE_SLACK, 0)` are cancellation
/// noise and are clamped to zero; anything more negative is an error.
pub const NEGATIVE_SLACK: f64 = 1e-12;
/// Deficit mass below which one side may be zero while the other is not.
pub const IMBALANCE_TOL: f64 = 1e-12;

/// `base + correction_row · correction_colᵀ · correction_scale`.
#[derive(Debug, Clone)]
pub struct FactoredPlan<T, O> {
    pub base: ScaledOperator<T, O>,
    pub correction_row: Vec<T>,
    pub correction_col: Vec<T>,
    /// `1/‖err_r‖₁`, or zero when there is nothing to repair.
    pub correction_scale: T,
}

impl<T: Scalar, O: LinearOperator<T>> FactoredPlan<T, O> {
    pub fn len(&self) -> usize {
        self.base.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(G1, Gᵀ1)`.
    pub fn marginals(&self) -> (Vec<T>, Vec<T>) {
        plan_marginals(self)
    }
}

impl<T: Scalar, O: LinearOperator<T>> LinearOperator<T> for FactoredPlan<T, O> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn apply(&self, x: &[T], out: &mut [T]) {
        self.base.apply(x, out);
        let s = dot(&self.correction_col, x) * self.correction_scale;
        for (o, &r) in out.iter_mut().zip(&self.correction_row) {
            *o = *o + r * s;
        }
    }

    fn apply_transpose(&self, x: &[T], out: &mut [T]) {
        self.base.apply_transpose(x, out);
        let s = dot(&self.correction_row, x) * self.correction_scale;
        for (o, &c) in out.iter_mut().zip(&self.correction_col) {
            *o = *o + c * s;
        }
    }
}

/// Rounds `F = D₁ A D₂`, whose marginals `F1 = rows` and `Fᵀ1 = cols` are
/// already known, onto `M(p, q)`.
///
/// The output `G` satisfies `‖G − F‖₁ ≤ ‖F1 − p‖₁ + ‖Fᵀ1 − q‖₁` and costs two
/// operator products.
pub fn round_to_polytope<T: Scalar, O: LinearOperator<T>>(
    f: ScaledOperator<T, O>,
    rows: &[T],
    cols: &[T],
    p: &[T],
    q: &[T],
) -> Result<FactoredPlan<T, O>> {
    let n = f.dim();
    if [rows.len(), cols.len(), p.len(), q.len()].iter().any(|&l| l != n) {
        return Err(Error::input(format!("rounding inputs must all have length {n}")));
    }
    check_simplex(p, "p")?;
    check_simplex(q, "q")?;
    check_marginal(rows, "row")?;
    check_marginal(cols, "column")?;

    let mut f = f;
    let row_shift = shrink_factors(rows, p);
    let rows_changed = row_shift.iter().any(|&x| x != T::zero());
    if rows_changed {
        f.shift_rows(&row_shift);
    }
    let cols_x = if rows_changed { f.col_marginals() } else { cols.to_vec() };
    check_marginal(&cols_x, "column")?;
    let col_shift = shrink_factors(&cols_x, q);
    f.shift_cols(&col_shift);
    let rows_xy = f.row_marginals();
    let cols_xy: Vec<T> = cols_x
        .iter()
        .zip(&col_shift)
        .map(|(&c, &s)| if s == T::zero() { c } else { c * s.exp() })
        .collect();

    let err_r = deficit(p, &rows_xy, "row")?;
    let err_c = deficit(q, &cols_xy, "column")?;
    let mass_r = sum(&err_r);
    let mass_c = sum(&err_c);
    let tol = T::c(IMBALANCE_TOL);
    let correction_scale = if mass_r > T::zero() && mass_c > T::zero() {
        T::one() / mass_r
    } else if mass_r <= tol && mass_c <= tol {
        T::zero()
    } else {
        return Err(Error::InvalidOperator(format!(
            "deficit masses disagree: rows {mass_r:e}, columns {mass_c:e}"
        )));
    };
    Ok(FactoredPlan {
        base: f,
        correction_row: err_r,
        correction_col: err_c,
        correction_scale,
    })
}

/// [`round_to_polytope`] on a bare operator, computing its marginals first.
pub fn round_operator<T: Scalar, O: LinearOperator<T>>(
    op: O,
    p: &[T],
    q: &[T],
) -> Result<FactoredPlan<T, O>> {
    let f = ScaledOperator::unscaled(op);
    let rows = f.row_marginals();
    let cols = f.col_marginals();
    round_to_polytope(f, &rows, &cols, p, q)
}

/// `log(min(target/actual, 1))`, which is `0` whenever `actual ≤ target`
/// (including `actual = 0`) and `-inf` when the target is zero.
fn shrink_factors<T: Scalar>(actual: &[T], target: &[T]) -> Vec<T> {
    actual
        .iter()
        .zip(target)
        .map(|(&a, &t)| if a <= t { T::zero() } else { (t / a).ln() })
        .collect()
}

fn check_marginal<T: Scalar>(m: &[T], what: &str) -> Result<()> {
    match m.iter().position(|x| !(*x >= T::zero()) || !x.is_finite()) {
        Some(i) => Err(Error::InvalidOperator(format!("{what} marginal {i} is {}", m[i]))),
        None => Ok(()),
    }
}

fn deficit<T: Scalar>(target: &[T], actual: &[T], what: &str) -> Result<Vec<T>> {
    let slack = T::c(NEGATIVE_SLACK);
    target
        .iter()
        .zip(actual)
        .enumerate()
        .map(|(i, (&t, &a))| {
            let d = t - a;
            if d >= T::zero() {
                Ok(d)
            } else if d >= -slack {
                Ok(T::zero())
            } else {
                Err(Error::InvalidOperator(format!(
                    "{what} {i} exceeds its target by {:e} after scaling",
                    -d
                )))
            }
        })
        .collect()
}

/// `(G1, Gᵀ1)` via the factored form.
pub fn plan_marginals<T: Scalar, O: LinearOperator<T>>(plan: &FactoredPlan<T, O>) -> (Vec<T>, Vec<T>) {
    let mut rows = plan.base.row_marginals();
    let mut cols = plan.base.col_marginals();
    let s = plan.correction_scale;
    let col_mass = sum(&plan.correction_col) * s;
    let row_mass = sum(&plan.correction_row) * s;
    for (r, &e) in rows.iter_mut().zip(&plan.correction_row) {
        *r = *r + e * col_mass;
    }
    for (c, &e) in cols.iter_mut().zip(&plan.correction_col) {
        *c = *c + e * row_mass;
    }
    (rows, cols)
}

/// `G w`.
pub fn plan_matvec<T: Scalar, O: LinearOperator<T>>(plan: &FactoredPlan<T, O>, w: &[T]) -> Vec<T> {
    plan.apply_vec(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::operator::densify;
    use crate::scalar::l1_distance;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_simplex(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    }

    fn random_matrix(n: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Matrix<f64> {
        Matrix::from_vec(n, n, (0..n * n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
    }

    fn violation(f: &Matrix<f64>, p: &[f64], q: &[f64]) -> f64 {
        l1_distance(&f.row_sums(), p) + l1_distance(&f.col_sums(), q)
    }

    #[test]
    fn feasible_input_is_untouched() {
        let f = Matrix::from_rows(&[vec![0.3, 0.2], vec![0.2, 0.3]]).unwrap();
        let plan = round_operator(&f, &[0.5, 0.5], &[0.5, 0.5]).unwrap();
        assert_eq!(plan.correction_scale, 0.0);
        assert!(plan.correction_row.iter().all(|&x| x == 0.0));
        assert!(plan.base.row_log().iter().all(|&x| x == 0.0));
        assert!(densify(&plan).sub(&f).max_abs() < 1e-15);
    }

    #[test]
    fn zero_matrix_becomes_product_coupling() {
        let f = Matrix::<f64>::zeros(3, 3);
        let p = [0.2, 0.3, 0.5];
        let q = [0.6, 0.1, 0.3];
        let plan = round_operator(&f, &p, &q).unwrap();
        assert_eq!(plan.correction_row, p.to_vec());
        assert_eq!(plan.correction_col, q.to_vec());
        let g = densify(&plan);
        for i in 0..3 {
            for j in 0..3 {
                assert!((g[(i, j)] - p[i] * q[j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_target_rows_are_emptied() {
        let f = Matrix::from_fn(2, 2, |_, _| 0.25);
        let plan = round_operator(&f, &[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert_eq!(plan.base.row_log()[1], f64::NEG_INFINITY);
        let (r, c) = plan_marginals(&plan);
        assert!(l1_distance(&r, &[1.0, 0.0]) + l1_distance(&c, &[0.5, 0.5]) < 1e-15);
    }

    #[test]
    fn negative_marginal_is_rejected() {
        let f = Matrix::from_rows(&[vec![-0.5, 0.1], vec![0.2, 0.3]]).unwrap();
        assert!(matches!(
            round_operator(&f, &[0.5, 0.5], &[0.5, 0.5]),
            Err(Error::InvalidOperator(_))
        ));
    }

    #[test]
    fn matvec_and_marginals_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_matrix(7, 0.0, 0.05, &mut rng);
        let p = random_simplex(7, &mut rng);
        let q = random_simplex(7, &mut rng);
        let plan = round_operator(&f, &p, &q).unwrap();
        let g = densify(&plan);
        let w: Vec<f64> = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut dense = vec![0.0; 7];
        g.matvec(&w, &mut dense);
        assert!(l1_distance(&plan_matvec(&plan, &w), &dense) < 1e-14);
        assert!(plan_matvec(&plan, &[0.0; 7]).iter().all(|&x| x == 0.0));
        let (r, c) = plan_marginals(&plan);
        assert!(l1_distance(&r, &g.row_sums()) < 1e-14);
        assert!(l1_distance(&c, &g.col_sums()) < 1e-14);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn rounding_is_feasible_and_close(seed in any::<u64>(), n in 1usize..12, scale in 0.1f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_simplex(n, &mut rng);
            let q = random_simplex(n, &mut rng);
            let f = random_matrix(n, 0.0, scale / (n * n) as f64, &mut rng);
            let plan = round_operator(&f, &p, &q).unwrap();
            prop_assert!(plan.correction_row.iter().chain(&plan.correction_col).all(|&x| x >= 0.0));
            let g = densify(&plan);
            prop_assert!(g.as_slice().iter().all(|&x| x >= 0.0));
            prop_assert!(violation(&g, &p, &q) <= 1e-12);
            let (r, c) = plan_marginals(&plan);
            prop_assert!(l1_distance(&r, &p) + l1_distance(&c, &q) <= 1e-12);
            // Any mass: the excess over one adds to the bound.
            let mass = f.as_slice().iter().sum::<f64>();
            prop_assert!(g.sub(&f).l1_norm() <= violation(&f, &p, &q) + (mass - 1.0) + 1e-12);
        }

        #[test]
        fn unit_mass_rounding_moves_at_most_the_violation(seed in any::<u64>(), n in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_simplex(n, &mut rng);
            let q = random_simplex(n, &mut rng);
            let raw = random_matrix(n, 0.0, 1.0, &mut rng);
            let mass = raw.as_slice().iter().sum::<f64>();
            let f = raw.map(|x| x / mass);
            let g = densify(&round_operator(&f, &p, &q).unwrap());
            prop_assert!(g.sub(&f).l1_norm() <= violation(&f, &p, &q) + 1e-12);
        }

        #[test]
        fn moving_between_polytopes_costs_marginal_distance(seed in any::<u64>(), n in 2usize..10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p_tilde = random_simplex(n, &mut rng);
            let q_tilde = random_simplex(n, &mut rng);
            let start = random_matrix(n, 0.01, 1.0, &mut rng);
            let feasible = densify(&round_operator(&start, &p_tilde, &q_tilde).unwrap());
            let p = random_simplex(n, &mut rng);
            let q = random_simplex(n, &mut rng);
            let moved = densify(&round_operator(&feasible, &p, &q).unwrap());
            let bound = l1_distance(&p, &p_tilde) + l1_distance(&q, &q_tilde);
            prop_assert!(moved.sub(&feasible).l1_norm() <= bound + 1e-12);
        }
    }
}
