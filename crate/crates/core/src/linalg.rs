//! Small dense linear-algebra kit: row-major matrices, Cholesky with a
//! jitter ladder, triangular solves and symmetric eigenvalues.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::input(format!(
                "buffer of length {} cannot hold a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::input("ragged rows"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    /// Builds a matrix entrywise, rows in parallel.
    pub fn from_fn<F>(rows: usize, cols: usize, f: F) -> Self
    where
        F: Fn(usize, usize) -> T + Sync,
    {
        let mut data = vec![T::zero(); rows * cols];
        if cols > 0 {
            data.par_chunks_mut(cols).enumerate().for_each(|(i, row)| {
                for (j, x) in row.iter_mut().enumerate() {
                    *x = f(i, j);
                }
            });
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// `y = A x`, rows in parallel.
    pub fn matvec(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.cols, "matvec: input length");
        assert_eq!(y.len(), self.rows, "matvec: output length");
        if self.cols == 0 {
            y.fill(T::zero());
            return;
        }
        y.par_iter_mut()
            .zip(self.data.par_chunks(self.cols))
            .for_each(|(yi, row)| *yi = dot(row, x));
    }

    /// `y = Aᵀ x`, accumulated row by row.
    pub fn matvec_transpose(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.rows, "matvec_transpose: input length");
        assert_eq!(y.len(), self.cols, "matvec_transpose: output length");
        y.fill(T::zero());
        for (row, &xi) in self.iter_rows().zip(x) {
            if xi == T::zero() {
                continue;
            }
            for (yj, &a) in y.iter_mut().zip(row) {
                *yj = *yj + a * xi;
            }
        }
    }

    pub fn row_sums(&self) -> Vec<T> {
        self.iter_rows().map(|r| r.iter().copied().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.cols];
        for row in self.iter_rows() {
            for (o, &a) in out.iter_mut().zip(row) {
                *o = *o + a;
            }
        }
        out
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// `max |Aᵢⱼ|`.
    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    /// `Σ |Aᵢⱼ|`.
    pub fn l1_norm(&self) -> T {
        self.data.iter().map(|x| x.abs()).sum()
    }

    /// `max |Aᵢⱼ − Aⱼᵢ|`; infinite for non-square input.
    pub fn max_asymmetry(&self) -> T {
        if !self.is_square() {
            return T::infinity();
        }
        let mut worst = T::zero();
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a - b)
                .collect(),
        }
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Jitter values tried, in order, when a Gram matrix is numerically singular.
pub const JITTER_LADDER: [f64; 6] = [0.0, 1e-12, 1e-10, 1e-8, 1e-6, 1e-4];

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = A`.
///
/// Returns `None` when a pivot is nonpositive or non-finite.
pub fn cholesky<T: Scalar>(a: &Matrix<T>) -> Option<Matrix<T>> {
    cholesky_shifted(a, T::zero())
}

/// Cholesky factor of `A + shift·I`.
pub fn cholesky_shifted<T: Scalar>(a: &Matrix<T>, shift: T) -> Option<Matrix<T>> {
    cholesky_with_min_pivot(a, shift, T::zero())
}

/// Pivots at or below this fraction of the largest diagonal entry count as
/// singular in [`cholesky_with_jitter`]: the factor would exist, but products
/// through `L⁻¹` lose all accuracy.
pub const MIN_RELATIVE_PIVOT: f64 = 1e-12;

fn cholesky_with_min_pivot<T: Scalar>(a: &Matrix<T>, shift: T, min_pivot: T) -> Option<Matrix<T>> {
    assert!(a.is_square(), "cholesky of a non-square matrix");
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let pivot = a[(j, j)] + shift - {
            let lj = &l.row(j)[..j];
            dot(lj, lj)
        };
        if !(pivot > min_pivot) || !pivot.is_finite() {
            return None;
        }
        let ljj = pivot.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let s = {
                let (li, lj) = (&l.row(i)[..j], &l.row(j)[..j]);
                dot(li, lj)
            };
            l[(i, j)] = (a[(i, j)] - s) / ljj;
        }
    }
    Some(l)
}

/// Cholesky of `A + jitter·I` with the smallest jitter from [`JITTER_LADDER`]
/// that succeeds with every pivot above [`MIN_RELATIVE_PIVOT`] times the
/// largest diagonal entry.
pub fn cholesky_with_jitter<T: Scalar>(a: &Matrix<T>) -> Result<(Matrix<T>, T)> {
    let scale = (0..a.rows()).fold(T::zero(), |m, i| m.max(a[(i, i)].abs()));
    let min_pivot = T::c(MIN_RELATIVE_PIVOT) * scale;
    for &j in &JITTER_LADDER {
        let jitter = T::c(j);
        if let Some(l) = cholesky_with_min_pivot(a, jitter, min_pivot) {
            return Ok((l, jitter));
        }
    }
    Err(Error::DegenerateLandmarks {
        max_jitter: JITTER_LADDER[JITTER_LADDER.len() - 1],
    })
}

/// Solves `L x = b` in place for lower-triangular `L`.
pub fn solve_lower_in_place<T: Scalar>(l: &Matrix<T>, b: &mut [T]) {
    let n = l.rows();
    debug_assert_eq!(b.len(), n);
    for i in 0..n {
        let s = dot(&l.row(i)[..i], &b[..i]);
        b[i] = (b[i] - s) / l[(i, i)];
    }
}

/// Solves `Lᵀ x = b` in place for lower-triangular `L`.
pub fn solve_lower_transpose_in_place<T: Scalar>(l: &Matrix<T>, b: &mut [T]) {
    let n = l.rows();
    debug_assert_eq!(b.len(), n);
    for i in (0..n).rev() {
        let xi = b[i] / l[(i, i)];
        b[i] = xi;
        for (bk, &lik) in b[..i].iter_mut().zip(&l.row(i)[..i]) {
            *bk = *bk - lik * xi;
        }
    }
}

/// Eigenvalues of a symmetric matrix in descending order.
///
/// Householder reduction to tridiagonal form followed by implicit QL with
/// Wilkinson-style shifts. Only the lower triangle of `a` is read.
pub fn symmetric_eigenvalues<T: Scalar>(a: &Matrix<T>) -> Result<Vec<T>> {
    if !a.is_square() {
        return Err(Error::input("eigenvalues of a non-square matrix"));
    }
    let n = a.rows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut a = a.clone();
    let mut d = vec![T::zero(); n];
    let mut e = vec![T::zero(); n];
    tridiagonalize(&mut a, &mut d, &mut e);
    tridiagonal_ql(&mut d, &mut e)?;
    d.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
    Ok(d)
}

fn tridiagonalize<T: Scalar>(a: &mut Matrix<T>, d: &mut [T], e: &mut [T]) {
    let n = a.rows();
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = T::zero();
        if l > 0 {
            let scale: T = a.row(i)[..=l].iter().map(|x| x.abs()).sum();
            if scale == T::zero() {
                e[i] = a[(i, l)];
            } else {
                for k in 0..=l {
                    let v = a[(i, k)] / scale;
                    a[(i, k)] = v;
                    h = h + v * v;
                }
                let f = a[(i, l)];
                let g = if f >= T::zero() { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h = h - f * g;
                a[(i, l)] = f - g;
                let mut f = T::zero();
                for j in 0..=l {
                    let mut g = T::zero();
                    for k in 0..=j {
                        g = g + a[(j, k)] * a[(i, k)];
                    }
                    for k in j + 1..=l {
                        g = g + a[(k, j)] * a[(i, k)];
                    }
                    e[j] = g / h;
                    f = f + e[j] * a[(i, j)];
                }
                let hh = f / (h + h);
                for j in 0..=l {
                    let f = a[(i, j)];
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        a[(j, k)] = a[(j, k)] - (f * e[k] + g * a[(i, k)]);
                    }
                }
            }
        } else {
            e[i] = a[(i, l)];
        }
        d[i] = h;
    }
    e[0] = T::zero();
    for i in 0..n {
        d[i] = a[(i, i)];
    }
}

fn tridiagonal_ql<T: Scalar>(d: &mut [T], e: &mut [T]) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = T::zero();
    let two = T::c(2.0);
    // Off-diagonals below ε‖T‖ are negligible in absolute terms; without this
    // clusters of eigenvalues near zero never meet the relative test.
    let norm = (0..n).fold(T::zero(), |acc, i| acc.max(d[i].abs() + e[i].abs()));
    let floor = T::epsilon() * norm;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= T::epsilon() * dd || e[m].abs() <= floor {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 100 {
                return Err(Error::input("tridiagonal QL failed to converge"));
            }
            let mut g = (d[l + 1] - d[l]) / (two * e[l]);
            let mut r = g.hypot(T::one());
            g = d[m] - d[l] + e[l] / (g + if g >= T::zero() { r.abs() } else { -r.abs() });
            let (mut s, mut c, mut p) = (T::one(), T::one(), T::zero());
            let mut deflated = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == T::zero() {
                    d[i + 1] = d[i + 1] - p;
                    e[m] = T::zero();
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + two * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            d[l] = d[l] - p;
            e[l] = g;
            e[m] = T::zero();
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gram(n: usize, seed: u64) -> Matrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let b = Matrix::from_vec(n, n, (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let mut g = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                g[(i, j)] = dot(b.row(i), b.row(j));
            }
        }
        g
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = gram(6, 1);
        let l = cholesky(&a).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let v = dot(&l.row(i)[..=i.min(j)], &l.row(j)[..=i.min(j)]);
                assert!((v - a[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jitter_rescues_singular_matrix() {
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let (l, jitter) = cholesky_with_jitter(&a).unwrap();
        assert!(jitter > 0.0 && jitter <= 1e-4);
        assert!(l[(1, 1)] > 0.0);
    }

    #[test]
    fn ladder_exhaustion_is_an_error() {
        let a = Matrix::from_rows(&[vec![-1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            cholesky_with_jitter(&a),
            Err(Error::DegenerateLandmarks { .. })
        ));
    }

    #[test]
    fn triangular_solves_invert() {
        let a = gram(5, 2);
        let l = cholesky(&a).unwrap();
        let b = vec![1.0, -2.0, 0.5, 3.0, 0.25];
        let mut x = b.clone();
        solve_lower_in_place(&l, &mut x);
        solve_lower_transpose_in_place(&l, &mut x);
        let mut ax = vec![0.0; 5];
        a.matvec(&x, &mut ax);
        for (u, v) in ax.iter().zip(&b) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn eigenvalues_of_simple_matrices() {
        let ev = symmetric_eigenvalues(&Matrix::<f64>::identity(3)).unwrap();
        assert_eq!(ev, vec![1.0, 1.0, 1.0]);
        let ones = Matrix::from_fn(4, 4, |_, _| 1.0f64);
        let ev = symmetric_eigenvalues(&ones).unwrap();
        assert!((ev[0] - 4.0).abs() < 1e-12);
        assert!(ev[1..].iter().all(|x| x.abs() < 1e-12));
        let diag = Matrix::from_rows(&[vec![2.0f64, 1.0], vec![1.0, 2.0]]).unwrap();
        let ev = symmetric_eigenvalues(&diag).unwrap();
        assert!((ev[0] - 3.0).abs() < 1e-12 && (ev[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigenvalues_sum_to_trace() {
        let a = gram(30, 3);
        let ev = symmetric_eigenvalues(&a).unwrap();
        let s: f64 = ev.iter().sum();
        assert!((s - a.trace()).abs() < 1e-9 * a.trace());
        assert!(ev.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn transpose_matvec_agrees() {
        let a = Matrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64);
        let x = [1.0, 2.0, 3.0];
        let mut y = [0.0; 4];
        a.matvec_transpose(&x, &mut y);
        let mut y2 = [0.0; 4];
        a.transpose().matvec(&x, &mut y2);
        assert_eq!(y, y2);
    }

    #[test]
    fn eigenvalues_of_a_near_singular_kernel() {
        // Smooth 1-D Gaussian kernel: hundreds of eigenvalues at round-off level.
        let n = 300;
        let k = Matrix::from_fn(n, n, |i, j| {
            let d = (i as f64 - j as f64) / n as f64;
            (-d * d).exp()
        });
        let ev = symmetric_eigenvalues(&k).unwrap();
        let total: f64 = ev.iter().sum();
        assert!((total - n as f64).abs() < 1e-9 * n as f64);
        assert!(ev.iter().all(|&x| x > -1e-10 * ev[0]));
    }
}
