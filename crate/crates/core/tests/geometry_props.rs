use nys_sink::geometry::center_and_radius;
use nys_sink::{merge_supports, squared_cost, PointSet, WeightedCloud};
use proptest::prelude::*;

fn cloud_strategy(max_len: usize, dim: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..=max_len).prop_flat_map(move |m| {
        (
            prop::collection::vec(-100.0..100.0f64, m * dim),
            prop::collection::vec(0.0..1.0f64, m),
        )
    })
}

fn weighted(dim: usize, coords: Vec<f64>, raw: Vec<f64>) -> WeightedCloud<f64> {
    let pts = PointSet::new(dim, coords).unwrap();
    let total: f64 = raw.iter().sum();
    if total == 0.0 {
        return WeightedCloud::uniform(pts).unwrap();
    }
    WeightedCloud::new(pts, raw.iter().map(|w| w / total).collect()).unwrap()
}

proptest! {
    #[test]
    fn centering_preserves_pairwise_costs(coords in prop::collection::vec(-1e3..1e3f64, 3..60)) {
        let dim = 3;
        let n = coords.len() / dim;
        let pts = PointSet::new(dim, coords[..n * dim].to_vec()).unwrap();
        let (centered, radius) = center_and_radius(&pts).unwrap();
        let scale = pts.coords().iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
        for i in 0..n {
            prop_assert!(centered.point(i).iter().map(|x| x * x).sum::<f64>().sqrt() <= radius * (1.0 + 1e-12));
            for j in 0..n {
                let raw = squared_cost(pts.point(i), pts.point(j)).unwrap();
                let moved = squared_cost(centered.point(i), centered.point(j)).unwrap();
                // Centering rounds each coordinate at the scale of the input.
                prop_assert!((raw - moved).abs() <= 1e-12 * raw.max(scale * scale));
            }
        }
    }

    #[test]
    fn merged_marginals_are_probability_vectors(
        (ca, wa) in cloud_strategy(20, 2),
        (cb, wb) in cloud_strategy(20, 2),
    ) {
        let a = weighted(2, ca, wa);
        let b = weighted(2, cb, wb);
        let inst = merge_supports(&a, &b, 1.0, 0.1).unwrap();
        prop_assert_eq!(inst.len(), a.len() + b.len());
        for w in [inst.p(), inst.q()] {
            prop_assert!(w.iter().all(|&x| x >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        prop_assert!(inst.p()[a.len()..].iter().all(|&x| x == 0.0));
        prop_assert!(inst.q()[..a.len()].iter().all(|&x| x == 0.0));
    }
}
