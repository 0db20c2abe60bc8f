use nys_sink::kernel::{
    dense_kernel, effective_dimension, effective_dimension_bound, eigen_decay_bound, eigen_spectrum, taylor_error_bound,
    GaussianKernel,
};
use nys_sink::PointSet;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ball(seed: u64, n: usize, d: usize) -> PointSet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::with_capacity(n * d);
    while coords.len() < n * d {
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if x.iter().map(|a| a * a).sum::<f64>() <= 1.0 {
            coords.extend(x);
        }
    }
    PointSet::new(d, coords).unwrap()
}

/// `(2ηR²)^{T+1}/(T+1)!` in exact rational arithmetic.
fn exact_taylor(degree: u32, eta: (i64, i64), r2: (i64, i64)) -> f64 {
    let base = BigRational::new(BigInt::from(2 * eta.0 * r2.0), BigInt::from(eta.1 * r2.1));
    let mut value = BigRational::one();
    for k in 1..=(degree as i64 + 1) {
        value = value * &base / BigRational::from_integer(BigInt::from(k));
    }
    value.to_f64().unwrap()
}

#[test]
fn taylor_bound_matches_exact_rational_arithmetic() {
    for (eta, r2) in [((1, 1), (1, 1)), ((5, 1), (1, 4)), ((3, 7), (9, 5)), ((25, 2), (2, 3))] {
        for degree in [0u32, 1, 5, 20, 60, 120] {
            let want = exact_taylor(degree, eta, r2);
            let got = taylor_error_bound(degree, eta.0 as f64 / eta.1 as f64, (r2.0 as f64 / r2.1 as f64).sqrt());
            if want == 0.0 {
                assert!(got < 1e-300);
            } else {
                assert!((got - want).abs() <= 1e-11 * want, "T={degree} η={eta:?} R²={r2:?}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn taylor_bound_stays_finite_for_large_degree() {
    let v: f64 = taylor_error_bound(10_000, 5.0, 1.0);
    assert!(v.is_finite() && v >= 0.0);
    assert!(v <= taylor_error_bound(9_999, 5.0, 1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ball_spectra_obey_decay_and_effective_dimension_bounds(
        seed in any::<u64>(),
        n in 20usize..200,
        d in 1usize..=3,
        eta in 0.5..5.0f64,
    ) {
        let pts = ball(seed, n, d);
        let k = dense_kernel(&pts, &GaussianKernel::new(eta).unwrap(), n).unwrap();
        let spectrum = eigen_spectrum(&k).unwrap();
        let floor = 1e-10 * spectrum.nth(1);
        for t in 1..n {
            if let Some(bound) = eigen_decay_bound(t, d, eta, 1.0, n) {
                prop_assert!(spectrum.nth(t + 1) <= bound.max(floor));
            }
        }
        let rank = spectrum.numerical_rank(0.0);
        let mut previous = f64::INFINITY;
        for tau in [1.0, 1e-1, 1e-2, 1e-3, 1e-4].into_iter().rev() {
            let d_eff = effective_dimension(&spectrum, tau, n).unwrap();
            prop_assert!(d_eff <= effective_dimension_bound(d, eta, 1.0, tau));
            prop_assert!(d_eff <= rank as f64 + 1e-9 && rank <= n);
            prop_assert!(d_eff < previous);
            previous = d_eff;
        }
    }
}
