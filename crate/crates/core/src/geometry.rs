//! Point clouds, support merging and the squared-Euclidean cost.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Absolute tolerance on `Σ wᵢ = 1` for simplex weight vectors.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// `n` points in `R^d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet<T> {
    dim: usize,
    coords: Vec<T>,
}

impl<T: Scalar> PointSet<T> {
    pub fn new(dim: usize, coords: Vec<T>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::input("points must have dimension at least 1"));
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(Error::input(format!(
                "{} coordinates do not split into points of dimension {dim}",
                coords.len()
            )));
        }
        Ok(Self { dim, coords })
    }

    pub fn from_points(points: &[Vec<T>]) -> Result<Self> {
        let dim = points
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::input("empty point list"))?;
        if let Some(bad) = points.iter().find(|p| p.len() != dim) {
            return Err(Error::input(format!(
                "dimension mismatch: expected {dim}, found {}",
                bad.len()
            )));
        }
        Self::new(dim, points.concat())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[T] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[T]> {
        self.coords.chunks(self.dim)
    }

    pub fn coords(&self) -> &[T] {
        &self.coords
    }

    /// Restriction to the given indices, in order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            coords.extend_from_slice(self.point(i));
        }
        Self {
            dim: self.dim,
            coords,
        }
    }

    /// `max ‖xᵢ‖₂`.
    pub fn max_norm(&self) -> T {
        self.iter()
            .map(|p| p.iter().map(|&x| x * x).sum::<T>().sqrt())
            .fold(T::zero(), T::max)
    }
}

/// Points with weights on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedCloud<T> {
    points: PointSet<T>,
    weights: Vec<T>,
}

impl<T: Scalar> WeightedCloud<T> {
    pub fn new(points: PointSet<T>, weights: Vec<T>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::input("empty cloud"));
        }
        if weights.len() != points.len() {
            return Err(Error::input(format!(
                "{} weights for {} points",
                weights.len(),
                points.len()
            )));
        }
        check_simplex(&weights, "weights")?;
        Ok(Self { points, weights })
    }

    /// Uniform weights `1/n`.
    pub fn uniform(points: PointSet<T>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::input("empty cloud"));
        }
        Self::new(points, vec![T::one() / T::from_count(n); n])
    }

    pub fn points(&self) -> &PointSet<T> {
        &self.points
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }
}

/// Merged, centered support with the two marginals and solver parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance<T> {
    support: PointSet<T>,
    p: Vec<T>,
    q: Vec<T>,
    eta: T,
    eps: T,
    radius: T,
}

impl<T: Scalar> ProblemInstance<T> {
    /// Builds an instance on an explicit support. The support is centered
    /// here, so callers may pass raw coordinates.
    pub fn new(support: PointSet<T>, p: Vec<T>, q: Vec<T>, eta: T, eps: T) -> Result<Self> {
        let m = support.len();
        if m == 0 {
            return Err(Error::input("empty support"));
        }
        if p.len() != m || q.len() != m {
            return Err(Error::input(format!(
                "marginal lengths ({}, {}) do not match support size {m}",
                p.len(),
                q.len()
            )));
        }
        check_simplex(&p, "p")?;
        check_simplex(&q, "q")?;
        if !(eta > T::zero()) || !eta.is_finite() {
            return Err(Error::input(format!("eta must be positive, got {eta}")));
        }
        if !(eps > T::zero() && eps <= T::one()) {
            return Err(Error::input(format!("eps must lie in (0, 1], got {eps}")));
        }
        let (support, radius) = center_and_radius(&support)?;
        Ok(Self {
            support,
            p,
            q,
            eta,
            eps,
            radius,
        })
    }

    pub fn support(&self) -> &PointSet<T> {
        &self.support
    }

    pub fn p(&self) -> &[T] {
        &self.p
    }

    pub fn q(&self) -> &[T] {
        &self.q
    }

    pub fn eta(&self) -> T {
        self.eta
    }

    pub fn eps(&self) -> T {
        self.eps
    }

    pub fn radius(&self) -> T {
        self.radius
    }

    /// Support size `m`.
    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.support.dim()
    }

    /// Same support and marginals with different solver parameters.
    pub fn with_params(&self, eta: T, eps: T) -> Result<Self> {
        Self::new(self.support.clone(), self.p.clone(), self.q.clone(), eta, eps)
    }
}

pub(crate) fn check_simplex<T: Scalar>(w: &[T], what: &str) -> Result<()> {
    if let Some((i, x)) = w.iter().enumerate().find(|(_, x)| !(**x >= T::zero()) || !x.is_finite()) {
        return Err(Error::input(format!("{what}[{i}] = {x} is not a nonnegative number")));
    }
    let total: T = w.iter().copied().sum();
    if (total - T::one()).abs() > T::c(SIMPLEX_TOL).max(T::epsilon() * T::from_count(4 * w.len())) {
        return Err(Error::input(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

/// `‖x − y‖₂²`.
pub fn squared_cost<T: Scalar>(x: &[T], y: &[T]) -> Result<T> {
    if x.len() != y.len() {
        return Err(Error::input(format!(
            "dimension mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    Ok(squared_distance(x, y))
}

/// Unchecked `‖x − y‖₂²` for hot loops over a single point set.
#[inline]
pub(crate) fn squared_distance<T: Scalar>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).fold(T::zero(), |acc, (&a, &b)| {
        let d = a - b;
        acc + d * d
    })
}

/// Translates the points by minus their coordinate-wise mean and returns the
/// largest norm after translation.
pub fn center_and_radius<T: Scalar>(points: &PointSet<T>) -> Result<(PointSet<T>, T)> {
    let n = points.len();
    if n == 0 {
        return Err(Error::input("cannot center an empty point set"));
    }
    let d = points.dim();
    let mut mean = vec![T::zero(); d];
    for p in points.iter() {
        for (m, &x) in mean.iter_mut().zip(p) {
            *m = *m + x;
        }
    }
    let inv_n = T::one() / T::from_count(n);
    for m in &mut mean {
        *m = *m * inv_n;
    }
    let coords = points
        .iter()
        .flat_map(|p| p.iter().zip(&mean).map(|(&x, &m)| x - m))
        .collect();
    let centered = PointSet { dim: d, coords };
    let radius = centered.max_norm();
    Ok((centered, radius))
}

/// Stacks `a` then `b` into one support (no deduplication), pads each weight
/// vector with zeros over the other block and centers the union.
pub fn merge_supports<T: Scalar>(
    a: &WeightedCloud<T>,
    b: &WeightedCloud<T>,
    eta: T,
    eps: T,
) -> Result<ProblemInstance<T>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::input("empty cloud"));
    }
    if a.dim() != b.dim() {
        return Err(Error::input(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let (na, nb) = (a.len(), b.len());
    let mut coords = Vec::with_capacity((na + nb) * a.dim());
    coords.extend_from_slice(a.points().coords());
    coords.extend_from_slice(b.points().coords());
    let support = PointSet::new(a.dim(), coords)?;
    let mut p = a.weights().to_vec();
    p.resize(na + nb, T::zero());
    let mut q = vec![T::zero(); na];
    q.extend_from_slice(b.weights());
    ProblemInstance::new(support, p, q, eta, eps)
}
