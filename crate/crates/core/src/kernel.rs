//! Gaussian kernel evaluation and spectral diagnostics.
//!
//! The diagnostics (spectrum, effective dimension, the Taylor truncation
//! bound and the ball eigen-decay bounds) are test-time tools: they work on
//! dense matrices and refuse inputs above a size cap.

use crate::error::{Error, Result};
use crate::geometry::{squared_distance, PointSet};
use crate::linalg::{symmetric_eigenvalues, Matrix};
use crate::scalar::Scalar;

/// Largest support for which [`dense_kernel`] will allocate by default.
pub const DEFAULT_KERNEL_CAP: usize = 20_000;
/// Largest matrix [`eigen_spectrum`] will decompose by default.
pub const DEFAULT_SPECTRUM_CAP: usize = 2_000;

/// Gaussian width parameter `η`; the bandwidth is `σ² = 1/(2η)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams<T> {
    eta: T,
}

impl<T: Scalar> KernelParams<T> {
    pub fn new(eta: T) -> Result<Self> {
        if !(eta > T::zero()) || !eta.is_finite() {
            return Err(Error::input(format!("eta must be positive, got {eta}")));
        }
        Ok(Self { eta })
    }

    pub fn eta(&self) -> T {
        self.eta
    }

    /// `σ² = 1/(2η)`.
    pub fn bandwidth_sq(&self) -> T {
        T::one() / (T::c(2.0) * self.eta)
    }
}

/// A positive semidefinite kernel on `R^d`.
///
/// Only the Gaussian kernel ships; the Nyström factor and the pipeline are
/// written against this trait.
pub trait KernelFunction<T: Scalar>: Sync {
    /// `k(x, y)`; callers guarantee equal dimensions.
    fn eval(&self, x: &[T], y: &[T]) -> T;

    /// `k(x, x)`.
    fn diagonal(&self, x: &[T]) -> T {
        self.eval(x, x)
    }
}

/// `k(x, y) = exp(−η‖x − y‖²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianKernel<T> {
    params: KernelParams<T>,
}

impl<T: Scalar> GaussianKernel<T> {
    pub fn new(eta: T) -> Result<Self> {
        Ok(Self {
            params: KernelParams::new(eta)?,
        })
    }

    pub fn from_params(params: KernelParams<T>) -> Self {
        Self { params }
    }

    pub fn eta(&self) -> T {
        self.params.eta
    }
}

impl<T: Scalar> KernelFunction<T> for GaussianKernel<T> {
    #[inline]
    fn eval(&self, x: &[T], y: &[T]) -> T {
        (-self.params.eta * squared_distance(x, y)).exp()
    }

    #[inline]
    fn diagonal(&self, _x: &[T]) -> T {
        T::one()
    }
}

pub fn kernel_entry<T: Scalar>(x: &[T], y: &[T], params: KernelParams<T>) -> Result<T> {
    if x.len() != y.len() {
        return Err(Error::input(format!(
            "dimension mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    Ok(GaussianKernel::from_params(params).eval(x, y))
}

/// Dense Gram matrix `Kᵢⱼ = k(xᵢ, xⱼ)` for supports up to `cap` points.
pub fn dense_kernel<T: Scalar, K: KernelFunction<T>>(
    points: &PointSet<T>,
    kernel: &K,
    cap: usize,
) -> Result<Matrix<T>> {
    let n = points.len();
    if n == 0 {
        return Err(Error::input("empty support"));
    }
    if n > cap {
        return Err(Error::Capacity { requested: n, cap });
    }
    let mut k = Matrix::from_fn(n, n, |i, j| {
        if j < i {
            T::zero()
        } else {
            kernel.eval(points.point(i), points.point(j))
        }
    });
    for i in 0..n {
        for j in 0..i {
            k[(i, j)] = k[(j, i)];
        }
    }
    Ok(k)
}

/// Eigenvalues of a symmetric PSD matrix, descending, with round-off
/// negatives clamped to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricSpectrum<T> {
    eigenvalues: Vec<T>,
}

impl<T: Scalar> SymmetricSpectrum<T> {
    /// Sorts descending and clamps entries above `−1e-10·λ₁` to zero.
    /// More negative entries mean the matrix was not PSD.
    pub fn from_eigenvalues(mut eigenvalues: Vec<T>) -> Result<Self> {
        if eigenvalues.iter().any(|x| !x.is_finite()) {
            return Err(Error::input("non-finite eigenvalue"));
        }
        eigenvalues.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
        let top = eigenvalues.first().copied().unwrap_or_else(T::zero).max(T::zero());
        let slack = T::c(1e-10) * top;
        for x in &mut eigenvalues {
            if *x < -slack {
                return Err(Error::input(format!(
                    "eigenvalue {x} is below the PSD slack of {}",
                    -slack
                )));
            }
            *x = x.max(T::zero());
        }
        Ok(Self { eigenvalues })
    }

    pub fn eigenvalues(&self) -> &[T] {
        &self.eigenvalues
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// `λ_j`, 1-based; zero past the end.
    pub fn nth(&self, j: usize) -> T {
        assert!(j >= 1, "eigenvalues are 1-indexed");
        self.eigenvalues.get(j - 1).copied().unwrap_or_else(T::zero)
    }

    /// Number of eigenvalues above `tol·λ₁`.
    pub fn numerical_rank(&self, tol: T) -> usize {
        let top = self.nth(1);
        self.eigenvalues.iter().filter(|&&x| x > tol * top).count()
    }
}

/// Spectrum of a symmetric matrix of side at most [`DEFAULT_SPECTRUM_CAP`].
pub fn eigen_spectrum<T: Scalar>(k: &Matrix<T>) -> Result<SymmetricSpectrum<T>> {
    eigen_spectrum_with_cap(k, DEFAULT_SPECTRUM_CAP)
}

pub fn eigen_spectrum_with_cap<T: Scalar>(k: &Matrix<T>, cap: usize) -> Result<SymmetricSpectrum<T>> {
    if !k.is_square() {
        return Err(Error::input("spectrum of a non-square matrix"));
    }
    if k.rows() > cap {
        return Err(Error::Capacity {
            requested: k.rows(),
            cap,
        });
    }
    let asym = k.max_asymmetry();
    if asym > T::c(1e-10) {
        return Err(Error::NotSymmetric {
            asymmetry: asym.to_f64_lossy(),
        });
    }
    SymmetricSpectrum::from_eigenvalues(symmetric_eigenvalues(k)?)
}

/// `d_eff(τ) = Σⱼ λⱼ / (λⱼ + τn)`.
pub fn effective_dimension<T: Scalar>(spectrum: &SymmetricSpectrum<T>, tau: T, n: usize) -> Result<T> {
    if !(tau > T::zero()) {
        return Err(Error::input(format!("tau must be positive, got {tau}")));
    }
    let shift = tau * T::from_count(n);
    Ok(spectrum
        .eigenvalues()
        .iter()
        .map(|&l| l / (l + shift))
        .sum())
}

/// `(2ηR²)^{T+1} / (T+1)!`, the entrywise error of truncating the Gaussian
/// kernel's Taylor expansion at degree `T` on a ball of radius `R`.
///
/// Evaluated in log space so that large `T` stays finite.
pub fn taylor_error_bound<T: Scalar>(degree: u32, eta: T, radius: T) -> T {
    let base = T::c(2.0) * eta * radius * radius;
    if base == T::zero() {
        return T::zero();
    }
    let k = degree as usize + 1;
    let log_factorial: f64 = (2..=k).map(|j| (j as f64).ln()).sum();
    let log_value = k as f64 * base.to_f64_lossy().ln() - log_factorial;
    T::c(log_value.exp())
}

/// Ball eigen-decay bound:
/// `λ_{t+1}(K) ≤ n·exp(−(d/2e)·t^{1/d}·log(d·t^{1/d} / (4e²ηR²)))`.
///
/// `None` when `t < (2e)^d` or the logarithm is not positive, where the
/// bound does not apply.
pub fn eigen_decay_bound<T: Scalar>(t: usize, d: usize, eta: T, radius: T, n: usize) -> Option<T> {
    let (df, tf) = (d as f64, t as f64);
    let e = std::f64::consts::E;
    if tf < (2.0 * e).powf(df) {
        return None;
    }
    let root = tf.powf(1.0 / df);
    let er2 = (eta * radius * radius).to_f64_lossy();
    let log_term = (df * root / (4.0 * e * e * er2)).ln();
    if !(log_term > 0.0) {
        return None;
    }
    Some(T::c(n as f64 * (-(df / (2.0 * e)) * root * log_term).exp()))
}

/// Ball effective-dimension bound
/// `d_eff(τ) ≤ 3(6 + (41/d)ηR² + (3/d)log(1/τ))^d` for `τ ∈ (0, 1]`.
pub fn effective_dimension_bound<T: Scalar>(d: usize, eta: T, radius: T, tau: T) -> T {
    let df = T::from_count(d);
    let inner = T::c(6.0) + T::c(41.0) / df * eta * radius * radius + T::c(3.0) / df * (T::one() / tau).ln();
    T::c(3.0) * inner.powi(d as i32)
}
