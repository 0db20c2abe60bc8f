//! Matrix-free square linear operators.
//!
//! Sinkhorn scaling and rounding touch the kernel only through products with
//! it and its transpose, so everything downstream of the kernel module is
//! written against [`LinearOperator`].

use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// A square `n × n` operator available through matrix-vector products.
pub trait LinearOperator<T: Scalar>: Sync {
    fn dim(&self) -> usize;

    /// `out = A x`.
    fn apply(&self, x: &[T], out: &mut [T]);

    /// `out = Aᵀ x`.
    fn apply_transpose(&self, x: &[T], out: &mut [T]);

    fn apply_vec(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim()];
        self.apply(x, &mut out);
        out
    }

    fn apply_transpose_vec(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim()];
        self.apply_transpose(x, &mut out);
        out
    }
}

impl<T: Scalar, O: LinearOperator<T> + ?Sized> LinearOperator<T> for &O {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn apply(&self, x: &[T], out: &mut [T]) {
        (**self).apply(x, out)
    }

    fn apply_transpose(&self, x: &[T], out: &mut [T]) {
        (**self).apply_transpose(x, out)
    }
}

impl<T: Scalar> LinearOperator<T> for Matrix<T> {
    fn dim(&self) -> usize {
        assert!(self.is_square(), "operator matrices must be square");
        self.rows()
    }

    fn apply(&self, x: &[T], out: &mut [T]) {
        self.matvec(x, out)
    }

    fn apply_transpose(&self, x: &[T], out: &mut [T]) {
        self.matvec_transpose(x, out)
    }
}

/// `D₁ A D₂` with the diagonals stored as logarithms.
///
/// Log-scalings may be `-inf`, which zeroes the corresponding row or column.
#[derive(Debug, Clone)]
pub struct ScaledOperator<T, O> {
    inner: O,
    row_log: Vec<T>,
    col_log: Vec<T>,
    row_scale: Vec<T>,
    col_scale: Vec<T>,
}

impl<T: Scalar, O: LinearOperator<T>> ScaledOperator<T, O> {
    pub fn new(inner: O, row_log: Vec<T>, col_log: Vec<T>) -> Self {
        let n = inner.dim();
        assert_eq!(row_log.len(), n, "row scaling length");
        assert_eq!(col_log.len(), n, "column scaling length");
        let row_scale = row_log.iter().map(|x| x.exp()).collect();
        let col_scale = col_log.iter().map(|x| x.exp()).collect();
        Self {
            inner,
            row_log,
            col_log,
            row_scale,
            col_scale,
        }
    }

    /// The unscaled operator with identity diagonals.
    pub fn unscaled(inner: O) -> Self {
        let n = inner.dim();
        Self::new(inner, vec![T::zero(); n], vec![T::zero(); n])
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }

    pub fn into_inner(self) -> O {
        self.inner
    }

    pub fn row_log(&self) -> &[T] {
        &self.row_log
    }

    pub fn col_log(&self) -> &[T] {
        &self.col_log
    }

    /// Multiplies the row diagonal by `exp(delta)` entrywise.
    pub fn shift_rows(&mut self, delta: &[T]) {
        for ((l, s), &d) in self.row_log.iter_mut().zip(&mut self.row_scale).zip(delta) {
            *l = *l + d;
            *s = l.exp();
        }
    }

    /// Multiplies the column diagonal by `exp(delta)` entrywise.
    pub fn shift_cols(&mut self, delta: &[T]) {
        for ((l, s), &d) in self.col_log.iter_mut().zip(&mut self.col_scale).zip(delta) {
            *l = *l + d;
            *s = l.exp();
        }
    }

    /// `(D₁AD₂) 1`.
    pub fn row_marginals(&self) -> Vec<T> {
        self.apply_vec(&vec![T::one(); self.dim()])
    }

    /// `(D₁AD₂)ᵀ 1`.
    pub fn col_marginals(&self) -> Vec<T> {
        self.apply_transpose_vec(&vec![T::one(); self.dim()])
    }
}

impl<T: Scalar, O: LinearOperator<T>> LinearOperator<T> for ScaledOperator<T, O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply(&self, x: &[T], out: &mut [T]) {
        let scaled: Vec<T> = x.iter().zip(&self.col_scale).map(|(&a, &s)| a * s).collect();
        self.inner.apply(&scaled, out);
        for (o, &s) in out.iter_mut().zip(&self.row_scale) {
            *o = *o * s;
        }
    }

    fn apply_transpose(&self, x: &[T], out: &mut [T]) {
        let scaled: Vec<T> = x.iter().zip(&self.row_scale).map(|(&a, &s)| a * s).collect();
        self.inner.apply_transpose(&scaled, out);
        for (o, &s) in out.iter_mut().zip(&self.col_scale) {
            *o = *o * s;
        }
    }
}

/// Materializes an operator column by column through `n` products with
/// standard basis vectors. Test-scale only.
pub fn densify<T: Scalar, O: LinearOperator<T> + ?Sized>(op: &O) -> Matrix<T> {
    let n = op.dim();
    let mut dense = Matrix::zeros(n, n);
    let mut e = vec![T::zero(); n];
    let mut col = vec![T::zero(); n];
    for j in 0..n {
        e[j] = T::one();
        op.apply(&e, &mut col);
        e[j] = T::zero();
        for (i, &v) in col.iter().enumerate() {
            dense[(i, j)] = v;
        }
    }
    dense
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaled_operator_matches_dense_product() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let op = ScaledOperator::new(&a, vec![0.0, 2f64.ln()], vec![3f64.ln(), 0.0]);
        let d = densify(&op);
        let want = Matrix::from_rows(&[vec![3.0, 2.0], vec![18.0, 8.0]]).unwrap();
        assert!(d.sub(&want).max_abs() < 1e-12);
        let t = op.apply_transpose_vec(&[1.0, 1.0]);
        assert!((t[0] - 21.0).abs() < 1e-12 && (t[1] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn negative_infinite_log_scaling_zeroes_a_row() {
        let a = Matrix::from_fn(2, 2, |_, _| 1.0f64);
        let op = ScaledOperator::new(&a, vec![f64::NEG_INFINITY, 0.0], vec![0.0, 0.0]);
        assert_eq!(op.row_marginals(), vec![0.0, 2.0]);
    }
}
