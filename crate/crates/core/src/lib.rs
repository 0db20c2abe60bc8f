//! Entropic optimal transport between point clouds with a Gaussian kernel,
//! solved by Sinkhorn scaling against an adaptive Nyström approximation.
//!
//! The core is generic over the floating-point type (`f32` or `f64`); the
//! aliases at the crate root fix it to `f64`.

// `!(x > 0)` is how parameter checks reject NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmark;
pub mod error;
pub mod geometry;
pub mod kernel;
pub mod linalg;
pub mod nystrom;
pub mod operator;
pub mod pipeline;
pub mod reference;
pub mod rounding;
pub mod scalar;
pub mod sinkhorn;
pub mod validation;

pub use error::{Error, Result};
pub use geometry::{merge_supports, squared_cost, PointSet, ProblemInstance, WeightedCloud};
pub use kernel::{dense_kernel, kernel_entry, GaussianKernel, KernelFunction, KernelParams};
pub use linalg::Matrix;
pub use nystrom::{adaptive_nystrom, build_factor, AdaptiveNystrom, NystromFactor, RankLimits};
pub use operator::{LinearOperator, ScaledOperator};
pub use pipeline::{compute_eps_prime, nys_sink, solve, RankPolicy, Solution, SolveReport, SolverConfig};
pub use rounding::{round_to_polytope, FactoredPlan};
pub use scalar::Scalar;
pub use sinkhorn::{sinkhorn_scale, ScalingPair, SinkhornOptions, SinkhornResult};

pub type Points = PointSet<f64>;
pub type Cloud = WeightedCloud<f64>;
pub type Problem = ProblemInstance<f64>;
pub type Factor = NystromFactor<f64>;
pub type Report = SolveReport<f64>;
